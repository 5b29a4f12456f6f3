//! The full network: screening and fusion branches feeding a gated
//! attention MIL classifier, in four ablation variants.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Selection, CHECKPOINT_VERSION};

use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::fusion::{fusion_in, ClinicalVector, FusionOutput, FusionParams, FusionVars};
use crate::numerics::{Gradients, Graph, Matrix, Parameters, Var};
use crate::params::{param_group, uniform_weight};
use crate::rng::{init_stream, Rng};
use crate::screening::{encode_grid_in, select_in, GridPolicy, ScreeningParams, ScreeningVars};
use crate::subtype::NUM_CLASSES;

/// Which branches are active. The four combinations are the ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Variant {
    pub use_ds: bool,
    pub use_cf: bool,
}

impl Variant {
    pub const FULL: Variant = Variant { use_ds: true, use_cf: true };
    pub const NO_DS: Variant = Variant { use_ds: false, use_cf: true };
    pub const NO_CF: Variant = Variant { use_ds: true, use_cf: false };
    pub const NONE: Variant = Variant { use_ds: false, use_cf: false };

    /// Ablation-table order: neither branch, no fusion, no screening, full.
    pub const ALL: [Variant; 4] = [Variant::NONE, Variant::NO_CF, Variant::NO_DS, Variant::FULL];

    pub fn name(self) -> &'static str {
        match (self.use_ds, self.use_cf) {
            (true, true) => "full",
            (false, true) => "no_ds",
            (true, false) => "no_cf",
            (false, false) => "none",
        }
    }

    pub fn label(self) -> &'static str {
        match (self.use_ds, self.use_cf) {
            (true, true) => "full (DS + CF)",
            (false, true) => "w/o DS",
            (true, false) => "w/o CF",
            (false, false) => "w/o DS, w/o CF",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?} (expected full|no_ds|no_cf|none)")))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Architecture hyperparameters, echoed into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Patch feature width `L`.
    pub feature_dim: usize,
    /// Number of clinical indicators `m`.
    pub clinical_dim: usize,
    /// Attention width; always equal to `feature_dim`.
    pub attn_dim: usize,
    /// Hidden width of the MIL attention scorer.
    pub mil_hidden: usize,
    /// Multiply the clinical query by `1/sqrt(L)`.
    pub scale_pooling: bool,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, clinical_dim: usize, variant: Variant) -> Self {
        Self {
            feature_dim,
            clinical_dim,
            attn_dim: feature_dim,
            mil_hidden: feature_dim.div_ceil(2),
            scale_pooling: true,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.clinical_dim == 0 || self.mil_hidden == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.attn_dim != self.feature_dim {
            return Err(Error::config(format!(
                "attention width {} must equal feature width {}",
                self.attn_dim, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Width of the per-patch representation fed to the MIL head.
    pub fn fused_dim(&self) -> usize {
        if self.variant.use_cf {
            self.feature_dim + self.attn_dim
        } else {
            self.feature_dim
        }
    }
}

param_group! {
    /// Gated attention pooling over patches.
    MilParams, MilVars {
        /// D x H
        att_w,
        /// 1 x H
        att_b,
        /// D x H
        gate_w,
        /// 1 x H
        gate_b,
        /// H x 1
        score_w,
    }
}

param_group! {
    /// Linear classifier on the pooled representation.
    HeadParams, HeadVars {
        /// D x 4
        w,
        /// 1 x 4
        b,
    }
}

/// Every learnable matrix, addressable by dotted name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub screening: ScreeningParams,
    pub fusion: FusionParams,
    pub mil: MilParams,
    pub head: HeadParams,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub screening: ScreeningVars,
    pub fusion: FusionVars,
    pub mil: MilVars,
    pub head: HeadVars,
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_stream(seed);
        Ok(Self::init_with(cfg, &mut rng))
    }

    fn init_with(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let (l, m, h, d) = (cfg.feature_dim, cfg.clinical_dim, cfg.mil_hidden, cfg.fused_dim());
        Self {
            screening: ScreeningParams::init(l, rng),
            fusion: FusionParams::init(l, m, rng),
            mil: MilParams {
                att_w: uniform_weight(rng, d, h),
                att_b: Matrix::zeros(1, h),
                gate_w: uniform_weight(rng, d, h),
                gate_b: Matrix::zeros(1, h),
                score_w: uniform_weight(rng, h, 1),
            },
            head: HeadParams {
                w: uniform_weight(rng, d, NUM_CLASSES),
                b: Matrix::zeros(1, NUM_CLASSES),
            },
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (l, m, h, d) = (cfg.feature_dim, cfg.clinical_dim, cfg.mil_hidden, cfg.fused_dim());
        Self {
            screening: ScreeningParams::zeros(l),
            fusion: FusionParams::zeros(l, m),
            mil: MilParams {
                att_w: Matrix::zeros(d, h),
                att_b: Matrix::zeros(1, h),
                gate_w: Matrix::zeros(d, h),
                gate_b: Matrix::zeros(1, h),
                score_w: Matrix::zeros(h, 1),
            },
            head: HeadParams {
                w: Matrix::zeros(d, NUM_CLASSES),
                b: Matrix::zeros(1, NUM_CLASSES),
            },
        }
    }

    pub fn bind(&self, graph: &mut Graph) -> ModelVars {
        ModelVars {
            screening: self.screening.bind(graph),
            fusion: self.fusion.bind(graph),
            mil: self.mil.bind(graph),
            head: self.head.bind(graph),
        }
    }

    pub fn from_grads(vars: &ModelVars, grads: &Gradients) -> Self {
        Self {
            screening: ScreeningParams::from_grads(&vars.screening, grads),
            fusion: FusionParams::from_grads(&vars.fusion, grads),
            mil: MilParams::from_grads(&vars.mil, grads),
            head: HeadParams::from_grads(&vars.head, grads),
        }
    }

    /// `true` if every matrix has the shape `cfg` implies.
    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let expected = ModelParams::zeros(cfg);
        self.tensors()
            .iter()
            .zip(expected.tensors())
            .all(|((a, m), (b, e))| *a == b && m.shape() == e.shape())
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.screening.named("screening.");
        out.extend(self.fusion.named("fusion."));
        out.extend(self.mil.named("mil."));
        out.extend(self.head.named("head."));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.screening.named_mut("screening.");
        out.extend(self.fusion.named_mut("fusion."));
        out.extend(self.mil.named_mut("mil."));
        out.extend(self.head.named_mut("head."));
        out
    }
}

/// Forward-pass mode. Training draws a fresh patch grid from the stream;
/// evaluation uses the identity grid.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// Graph handles produced by [`forward_in`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// 1 x 4
    pub logits: Var,
    /// N x 1 screening gate, when screening is active.
    pub xi: Option<Var>,
    pub fusion: Option<FusionOutput>,
    /// 1 x N MIL pooling weights.
    pub pooling: Var,
    /// N x D per-patch representation.
    pub fused: Var,
}

/// Gated attention pooling: `a = softmax_N((tanh(H Wa) ⊙ σ(H Wg)) w)`,
/// pooled = `a · H`. Returns `(pooled, weights)`.
pub fn mil_pool_in(graph: &mut Graph, vars: &MilVars, h: Var) -> Result<(Var, Var)> {
    let att = graph.linear(h, vars.att_w, vars.att_b)?;
    let att = graph.tanh(att);
    let gate = graph.linear(h, vars.gate_w, vars.gate_b)?;
    let gate = graph.sigmoid(gate);
    let gated = graph.mul(att, gate)?;
    let scores = graph.matmul(gated, vars.score_w)?;
    let scores = graph.transpose(scores);
    let weights = graph.softmax_rows(scores);
    let pooled = graph.matmul(weights, h)?;
    Ok((pooled, weights))
}

/// Builds the forward pass for one bag inside `graph`.
pub fn forward_in(
    graph: &mut Graph,
    vars: &ModelVars,
    cfg: &ModelConfig,
    bag: &FeatureBag,
    mode: Mode<'_>,
) -> Result<ForwardVars> {
    let (n, l) = bag.features.shape();
    if n == 0 {
        return Err(Error::EmptyBag);
    }
    if l != cfg.feature_dim {
        return Err(Error::config(format!(
            "bag {} has feature width {l}, model expects {}",
            bag.case_id, cfg.feature_dim
        )));
    }
    if bag.clinical.len() != cfg.clinical_dim {
        return Err(Error::config(format!(
            "bag {} has {} clinical indicators, model expects {}",
            bag.case_id,
            bag.clinical.len(),
            cfg.clinical_dim
        )));
    }
    let clinical = ClinicalVector::new(bag.clinical.clone())?;
    let x = graph.constant(bag.features.clone());

    let (s, xi) = if cfg.variant.use_ds {
        let grid = match mode {
            Mode::Train(rng) => GridPolicy::Random(rng).grid(n)?,
            Mode::Eval => GridPolicy::Identity.grid(n)?,
        };
        let encoded = encode_grid_in(graph, &vars.screening, &grid)?;
        let (s, xi) = select_in(graph, &vars.screening, x, encoded)?;
        (s, Some(xi))
    } else {
        (x, None)
    };

    let (fused, fusion) = if cfg.variant.use_cf {
        let c = graph.constant(clinical.to_row());
        let out = fusion_in(graph, &vars.fusion, x, c, cfg.scale_pooling)?;
        (graph.concat_cols(s, out.h)?, Some(out))
    } else {
        (s, None)
    };

    let (pooled, pooling) = mil_pool_in(graph, &vars.mil, fused)?;
    let logits = graph.linear(pooled, vars.head.w, vars.head.b)?;
    Ok(ForwardVars {
        logits,
        xi,
        fusion,
        pooling,
        fused,
    })
}

/// Intermediate values exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub xi: Option<Matrix>,
    /// m x N
    pub clinical_attention: Option<Matrix>,
    /// N x m
    pub shared_attention: Option<Matrix>,
    /// 1 x N
    pub pooling: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub diagnostics: Diagnostics,
}

pub fn forward(bag: &FeatureBag, params: &ModelParams, cfg: &ModelConfig, mode: Mode<'_>) -> Result<ForwardOutput> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let out = forward_in(&mut graph, &vars, cfg, bag, mode)?;
    let value = |v: Var| graph.value(v).clone();
    Ok(ForwardOutput {
        logits: value(out.logits),
        diagnostics: Diagnostics {
            xi: out.xi.map(value),
            clinical_attention: out.fusion.map(|f| value(f.clinical_attention)),
            shared_attention: out.fusion.map(|f| value(f.shared_attention)),
            pooling: value(out.pooling),
        },
    })
}

/// Class probabilities from a 1 x 4 logit row.
pub fn predict_proba(logits: &Matrix) -> Matrix {
    logits.softmax_rows()
}

/// Cross-entropy of one logit row against `label`.
pub fn loss(logits: &Matrix, label: usize) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = g.cross_entropy(z, label)?;
    Ok(g.value(l).as_slice()[0])
}

/// Loss of one bag and its gradient with respect to every parameter.
pub fn loss_and_grads(
    bag: &FeatureBag,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode<'_>,
) -> Result<(f64, ModelParams)> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let (graph, l) = record_loss(graph, &vars, cfg, bag, mode)?;
    let grads = graph.backward(l)?;
    Ok((graph.value(l).as_slice()[0], ModelParams::from_grads(&vars, &grads)))
}

/// Records the loss on a fresh graph and returns it with its scalar root.
pub fn loss_graph(bag: &FeatureBag, params: &ModelParams, cfg: &ModelConfig, mode: Mode<'_>) -> Result<(Graph, Var)> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    record_loss(graph, &vars, cfg, bag, mode)
}

fn record_loss(mut graph: Graph, vars: &ModelVars, cfg: &ModelConfig, bag: &FeatureBag, mode: Mode<'_>) -> Result<(Graph, Var)> {
    let out = forward_in(&mut graph, vars, cfg, bag, mode)?;
    let l = graph.cross_entropy(out.logits, bag.label.index())?;
    Ok((graph, l))
}

/// Loss only; no backward pass.
pub fn loss_value(bag: &FeatureBag, params: &ModelParams, cfg: &ModelConfig, mode: Mode<'_>) -> Result<f64> {
    let out = forward(bag, params, cfg, mode)?;
    loss(&out.logits, bag.label.index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{grid_stream, stream};
    use crate::subtype::Subtype;
    use rand::Rng as _;

    fn tiny_bag(n: usize, l: usize, m: usize, seed: u64) -> FeatureBag {
        let mut rng = stream(seed, "bag", &[]);
        let features = Matrix::new(n, l, (0..n * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        FeatureBag {
            case_id: format!("case_{seed}"),
            features,
            clinical: (0..m).map(|_| rng.random_range(0.0..=1.0)).collect(),
            label: Subtype::Et,
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::from_str::<Variant>(&serde_json::to_string(&v).unwrap()).unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }

    #[test]
    fn logits_have_four_classes() {
        let cfg = ModelConfig::new(16, 10, Variant::FULL);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let out = forward(&tiny_bag(8, 16, 10, 2), &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(out.logits.shape(), (1, 4));
        assert_eq!(out.diagnostics.pooling.shape(), (1, 8));
        assert_eq!(out.diagnostics.clinical_attention.unwrap().shape(), (10, 8));
        assert_eq!(out.diagnostics.shared_attention.unwrap().shape(), (8, 10));
        assert_eq!(out.diagnostics.xi.unwrap().shape(), (8, 1));
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let cfg = ModelConfig::new(16, 10, Variant::FULL);
        let p = ModelParams::init(&cfg, 3).unwrap();
        let bag = tiny_bag(8, 16, 10, 4);
        let a = forward(&bag, &p, &cfg, Mode::Eval).unwrap();
        let b = forward(&bag, &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patch_order_matters_only_with_screening() {
        let order = [5, 2, 7, 0, 3, 6, 1, 4];
        for v in Variant::ALL {
            let cfg = ModelConfig::new(16, 10, v);
            let p = ModelParams::init(&cfg, 5).unwrap();
            let bag = tiny_bag(8, 16, 10, 6);
            let shuffled = FeatureBag {
                features: bag.features.select_rows(&order),
                ..bag.clone()
            };
            let a = predict_proba(&forward(&bag, &p, &cfg, Mode::Eval).unwrap().logits);
            let b = predict_proba(&forward(&shuffled, &p, &cfg, Mode::Eval).unwrap().logits);
            let gap = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if v.use_ds {
                assert!(gap > 1e-9, "{v}: gap {gap}");
            } else {
                assert!(gap < 1e-12, "{v}: gap {gap}");
            }
        }
    }

    #[test]
    fn train_mode_grid_depends_only_on_stream() {
        let cfg = ModelConfig::new(8, 4, Variant::FULL);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let bag = tiny_bag(6, 8, 4, 6);
        let a = forward(&bag, &p, &cfg, Mode::Train(&mut grid_stream(1, 2, &bag.case_id))).unwrap();
        let b = forward(&bag, &p, &cfg, Mode::Train(&mut grid_stream(1, 2, &bag.case_id))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn none_variant_is_plain_attention_mil() {
        let cfg = ModelConfig::new(6, 3, Variant::NONE);
        let p = ModelParams::init(&cfg, 7).unwrap();
        let bag = tiny_bag(5, 6, 3, 8);
        let out = forward(&bag, &p, &cfg, Mode::Eval).unwrap();

        let x = &bag.features;
        let (n, d, h) = (5, 6, cfg.mil_hidden);
        let mut scores = vec![0.0; n];
        for i in 0..n {
            for k in 0..h {
                let mut a = p.mil.att_b.get(0, k);
                let mut g = p.mil.gate_b.get(0, k);
                for j in 0..d {
                    a += x.get(i, j) * p.mil.att_w.get(j, k);
                    g += x.get(i, j) * p.mil.gate_w.get(j, k);
                }
                scores[i] += a.tanh() / (1.0 + (-g).exp()) * p.mil.score_w.get(k, 0);
            }
        }
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        for c in 0..4 {
            let mut logit = p.head.b.get(0, c);
            for j in 0..d {
                let pooled: f64 = (0..n).map(|i| weights[i] * x.get(i, j)).sum();
                logit += pooled * p.head.w.get(j, c);
            }
            assert!((out.logits.get(0, c) - logit).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_proba_examples() {
        let p = predict_proba(&Matrix::zeros(1, 4));
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = predict_proba(&Matrix::row_vector(&[100.0, 0.0, 0.0, 0.0]).unwrap());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        let logits = Matrix::row_vector(&[0.3, -2.0, 1.7, 1.1]).unwrap();
        let probs = predict_proba(&logits);
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        let argmax = |m: &Matrix| {
            m.as_slice()
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > m.as_slice()[best] { i } else { best })
        };
        assert_eq!(argmax(&probs), argmax(&logits));
    }

    #[test]
    fn loss_examples() {
        assert!((loss(&Matrix::zeros(1, 4), 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        let confident = Matrix::row_vector(&[0.0, 50.0, 0.0, 0.0]).unwrap();
        assert!(loss(&confident, 1).unwrap() < 1e-12);
        assert!(matches!(loss(&Matrix::zeros(1, 4), 4), Err(Error::LabelOutOfRange(4))));
    }

    #[test]
    fn rejects_mismatched_bags() {
        let cfg = ModelConfig::new(8, 4, Variant::FULL);
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert!(matches!(forward(&tiny_bag(3, 7, 4, 1), &p, &cfg, Mode::Eval), Err(Error::Config(_))));
        assert!(matches!(forward(&tiny_bag(3, 8, 5, 1), &p, &cfg, Mode::Eval), Err(Error::Config(_))));
        let mut bad = tiny_bag(3, 8, 4, 1);
        bad.clinical[0] = 3.0;
        assert!(matches!(forward(&bad, &p, &cfg, Mode::Eval), Err(Error::Config(_))));
    }

    #[test]
    fn none_variant_leaves_branch_gradients_zero() {
        let cfg = ModelConfig::new(8, 4, Variant::NONE);
        let p = ModelParams::init(&cfg, 2).unwrap();
        let (_, grads) = loss_and_grads(&tiny_bag(5, 8, 4, 3), &p, &cfg, Mode::Eval).unwrap();
        for (name, g) in grads.tensors() {
            if name.starts_with("screening.") || name.starts_with("fusion.") {
                assert!(g.as_slice().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(grads.head.w.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn param_shapes_follow_variant() {
        for v in Variant::ALL {
            let cfg = ModelConfig::new(16, 10, v);
            let p = ModelParams::init(&cfg, 0).unwrap();
            assert!(p.matches(&cfg));
            assert_eq!(p.head.w.rows(), cfg.fused_dim());
            assert_eq!(cfg.mil_hidden, 8);
        }
        assert!(!ModelParams::zeros(&ModelConfig::new(16, 10, Variant::FULL))
            .matches(&ModelConfig::new(16, 10, Variant::NONE)));
    }
}
