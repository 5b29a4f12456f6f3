//! Adam optimization, the epoch loop with validation-based model selection,
//! and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBag, SplitData};
use crate::error::{Error, Result};
use crate::metrics::{report, MetricsReport};
use crate::model::{forward, loss_and_grads, predict_proba, Mode, ModelConfig, ModelParams, Variant};
use crate::numerics::Parameters;
use crate::rng::{grid_stream, shuffle_stream};
use crate::subtype::NUM_CLASSES;

/// Name of the model-selection criterion recorded in checkpoints.
pub const SELECTION_CRITERION: &str = "val_macro_auc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            variant: Variant::FULL,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so a run can be checked to leave the
    /// initialization untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::config(format!("adam_eps {} must be positive", self.adam_eps)));
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
}

fn zeroed<P: Parameters>(params: &P) -> P {
    let mut z = params.clone();
    for (_, m) in z.tensors_mut() {
        m.as_mut_slice().fill(0.0);
    }
    z
}

impl<P: Parameters> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: zeroed(params),
            v: zeroed(params),
            t: 0,
        }
    }
}

fn same_layout<P: Parameters>(a: &P, b: &P) -> Result<()> {
    let (ta, tb) = (a.tensors(), b.tensors());
    if ta.len() != tb.len() {
        return Err(Error::config(format!("parameter count {} vs gradient count {}", ta.len(), tb.len())));
    }
    for ((na, ma), (nb, mb)) in ta.iter().zip(&tb) {
        if na != nb || ma.shape() != mb.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: ma.shape(),
                right: mb.shape(),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState<P>, cfg: &TrainConfig) -> Result<()> {
    same_layout(params, grads)?;
    same_layout(params, &state.m)?;
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let g = grads.tensors();
    for (((_, p), (_, m)), ((_, v), (_, g))) in params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut().into_iter().zip(g))
    {
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..p.len() {
            let gi = g.as_slice()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy over the training bags seen this epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_auc: f64,
}

/// Epoch with the highest validation macro-AUC; the earliest wins ties.
pub fn select_best(history: &[EpochRecord]) -> Option<&EpochRecord> {
    history
        .iter()
        .fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.val_macro_auc >= r.val_macro_auc => Some(b),
            _ => Some(r),
        })
}

/// History as JSON lines, one record per epoch.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_macro_auc: f64,
    /// Parameters after the last epoch.
    pub last: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Class probabilities for each bag, evaluated in parallel and returned in
/// input order.
pub fn predict(params: &ModelParams, bags: &[FeatureBag], cfg: &ModelConfig) -> Result<Vec<[f64; NUM_CLASSES]>> {
    bags.par_iter()
        .map(|b| {
            let logits = forward(b, params, cfg, Mode::Eval)?.logits;
            let p = predict_proba(&logits);
            let mut row = [0.0; NUM_CLASSES];
            row.copy_from_slice(p.as_slice());
            Ok(row)
        })
        .collect()
}

/// Eval-mode metrics over `bags`.
pub fn evaluate(params: &ModelParams, bags: &[FeatureBag], cfg: &ModelConfig) -> Result<MetricsReport> {
    if bags.is_empty() {
        return Err(Error::DegenerateInput("evaluation set is empty".into()));
    }
    let probs = predict(params, bags, cfg)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.label.index()).collect();
    report(&labels, &probs)
}

fn mean_eval_loss(probs: &[[f64; NUM_CLASSES]], bags: &[FeatureBag]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(bags)
        .map(|(p, b)| -p[b.label.index()].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / bags.len() as f64
}

fn check_bags(bags: &[FeatureBag], cfg: &ModelConfig, what: &str) -> Result<()> {
    for b in bags {
        if b.feature_dim() != cfg.feature_dim || b.clinical.len() != cfg.clinical_dim {
            return Err(Error::config(format!(
                "{what} bag {} has L={}, m={}; model expects L={}, m={}",
                b.case_id,
                b.feature_dim(),
                b.clinical.len(),
                cfg.feature_dim,
                cfg.clinical_dim
            )));
        }
    }
    Ok(())
}

pub fn train(
    train_set: &[FeatureBag],
    val_set: &[FeatureBag],
    params: ModelParams,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(train_set, val_set, params, model_cfg, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    train_set: &[FeatureBag],
    val_set: &[FeatureBag],
    mut params: ModelParams,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.variant != cfg.variant {
        return Err(Error::config(format!(
            "model variant {} differs from training variant {}",
            model_cfg.variant, cfg.variant
        )));
    }
    if !params.matches(model_cfg) {
        return Err(Error::config("initial parameters do not match the model config"));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    check_bags(train_set, model_cfg, "train")?;
    check_bags(val_set, model_cfg, "validation")?;

    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_stream(cfg.seed, epoch));
        let mut loss_sum = 0.0;
        for &i in &order {
            let bag = &train_set[i];
            let mut grid = grid_stream(cfg.seed, epoch, &bag.case_id);
            let (l, grads) = loss_and_grads(bag, &params, model_cfg, Mode::Train(&mut grid))?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("epoch {epoch}, case {}", bag.case_id),
                });
            }
            loss_sum += l;
            adam_step(&mut params, &grads, &mut state, cfg)?;
        }

        let probs = predict(&params, val_set, model_cfg)?;
        let labels: Vec<usize> = val_set.iter().map(|b| b.label.index()).collect();
        let val = report(&labels, &probs)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: mean_eval_loss(&probs, val_set),
            val_accuracy: val.accuracy,
            val_macro_auc: val.macro_auc(),
        };
        if select_best(&history).is_none_or(|b| record.val_macro_auc > b.val_macro_auc) {
            best = params.clone();
        }
        history.push(record);
        on_epoch(&record);
    }
    let chosen = *select_best(&history).expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch: chosen.epoch,
        best_val_macro_auc: chosen.val_macro_auc,
        last: params,
        history,
    })
}

/// Test-set result of one ablation arm.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

impl AblationRow {
    /// ACC, AUC, precision, recall and F1 in percent.
    pub fn values(&self) -> [f64; 5] {
        let m = &self.test.macro_avg;
        [self.test.accuracy, self.test.macro_auc(), m.precision, m.recall, m.f1].map(|v| v * 100.0)
    }
}

/// Trains and tests one variant with the shared seed of `base`.
pub fn run_arm(data: &SplitData, variant: Variant, base: &TrainConfig) -> Result<AblationRow> {
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::config("training split is empty"))?;
    let model_cfg = ModelConfig::new(first.feature_dim(), first.clinical.len(), variant);
    let cfg = TrainConfig { variant, ..*base };
    let params = ModelParams::init(&model_cfg, cfg.seed)?;
    let outcome = train(&data.train, &data.val, params, &model_cfg, &cfg)?;
    Ok(AblationRow {
        variant,
        config: cfg,
        best_epoch: outcome.best_epoch,
        test: evaluate(&outcome.best, &data.test, &model_cfg)?,
    })
}

/// Runs every variant in ablation-table order. With `parallel` the arms run
/// concurrently; results are identical either way. `on_row` sees each row
/// as soon as it is available in the sequential case.
pub fn ablate(
    data: &SplitData,
    base: &TrainConfig,
    parallel: bool,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if parallel {
        let rows: Vec<AblationRow> = Variant::ALL
            .par_iter()
            .map(|&v| run_arm(data, v, base))
            .collect::<Result<_>>()?;
        rows.iter().for_each(&mut on_row);
        Ok(rows)
    } else {
        Variant::ALL
            .iter()
            .map(|&v| {
                let row = run_arm(data, v, base)?;
                on_row(&row);
                Ok(row)
            })
            .collect()
    }
}

pub const ABLATION_COLUMNS: [&str; 5] = ["ACC", "AUC", "Precision", "Recall", "F1"];

pub fn ablation_csv_header() -> String {
    format!("variant,DS,CF,seed,{}\n", ABLATION_COLUMNS.join(","))
}

pub fn ablation_csv_row(row: &AblationRow) -> String {
    let mut s = format!(
        "{},{},{},{}",
        row.variant.name(),
        u8::from(row.variant.use_ds),
        u8::from(row.variant.use_cf),
        row.config.seed
    );
    for v in row.values() {
        s.push_str(&format!(",{v:.2}"));
    }
    s.push('\n');
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    rows.iter().fold(ablation_csv_header(), |acc, r| acc + &ablation_csv_row(r))
}

/// Aligned text table, metrics in percent.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<18}{:>4}{:>4}", "", "DS", "CF");
    for c in ABLATION_COLUMNS {
        s.push_str(&format!("{c:>11}"));
    }
    s.push('\n');
    let mark = |b: bool| if b { "x" } else { "-" };
    for r in rows {
        s.push_str(&format!("{:<18}{:>4}{:>4}", r.variant.label(), mark(r.variant.use_ds), mark(r.variant.use_cf)));
        for v in r.values() {
            s.push_str(&format!("{v:>11.2}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::{generate_synthetic, GenConfig, Split};
    use crate::numerics::{Matrix, NamedParams};
    use crate::subtype::Subtype;

    fn scalar(v: f64) -> NamedParams {
        NamedParams(BTreeMap::from([("x".to_string(), Matrix::from_rows(&[vec![v]]).unwrap())]))
    }

    fn value(p: &NamedParams) -> f64 {
        p.0["x"].as_slice()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(value(&p), 1.5);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        for g in [3.0, -0.02, 250.0] {
            let mut p = scalar(0.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &scalar(g), &mut s, &cfg).unwrap();
            assert!((value(&p) + cfg.learning_rate * g.signum()).abs() < cfg.learning_rate * 1e-6);
        }
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_oracle() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        // Scalar Adam on f(x) = (x - 3)^2.
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            expected.push(x);
        }
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        for want in expected {
            let g = scalar(2.0 * (value(&p) - 3.0));
            adam_step(&mut p, &g, &mut s, &cfg).unwrap();
            assert!((value(&p) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        let mut g = NamedParams::default();
        g.0.insert("x".into(), Matrix::zeros(2, 1));
        assert!(adam_step(&mut p, &g, &mut s, &TrainConfig::default()).is_err());
    }

    #[test]
    fn selection_prefers_earliest_best() {
        let rec = |epoch, auc| EpochRecord {
            epoch,
            train_loss: 1.0,
            val_loss: 1.0,
            val_accuracy: 0.5,
            val_macro_auc: auc,
        };
        let h = [rec(1, 0.6), rec(2, 0.8), rec(3, 0.8), rec(4, 0.7)];
        assert_eq!(select_best(&h).unwrap().epoch, 2);
        assert!(select_best(&[]).is_none());
        let lines = history_jsonl(&h).unwrap();
        assert_eq!(lines.lines().count(), 4);
        let back: EpochRecord = serde_json::from_str(lines.lines().nth(1).unwrap()).unwrap();
        assert_eq!(back, h[1]);
    }

    fn tiny() -> (Vec<FeatureBag>, Vec<FeatureBag>) {
        let gen = GenConfig {
            counts: [6, 6, 6, 6],
            feature_dim: 8,
            clinical_dim: 5,
            min_patches: 3,
            max_patches: 6,
            ..GenConfig::default()
        };
        let (bags, mut manifest) = generate_synthetic(&gen, 7).unwrap();
        manifest.assign_splits(&bags, 7, false).unwrap();
        let data = manifest.partition(&bags).unwrap();
        (data.get(Split::Train).to_vec(), data.get(Split::Val).to_vec())
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let (tr, va) = tiny();
        let mcfg = ModelConfig::new(8, 5, Variant::FULL);
        let init = ModelParams::init(&mcfg, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&tr, &va, init.clone(), &mcfg, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.last, init);
        assert_eq!(out.best, init);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (tr, va) = tiny();
        let mcfg = ModelConfig::new(8, 5, Variant::FULL);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e-3,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || train(&tr, &va, ModelParams::init(&mcfg, 4).unwrap(), &mcfg, &cfg).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(history_jsonl(&a.history).unwrap(), history_jsonl(&b.history).unwrap());
        assert_eq!(a.last, b.last);
        assert_eq!(a.best_epoch, select_best(&a.history).unwrap().epoch);
    }

    #[test]
    fn uniform_model_predicts_lowest_class() {
        let (tr, _) = tiny();
        let mcfg = ModelConfig::new(8, 5, Variant::NONE);
        let r = evaluate(&ModelParams::zeros(&mcfg), &tr, &mcfg).unwrap();
        let pv = tr.iter().filter(|b| b.label == Subtype::Pv).count();
        assert_eq!(r.accuracy, pv as f64 / tr.len() as f64);
        assert!(evaluate(&ModelParams::zeros(&mcfg), &[], &mcfg).is_err());
    }

    #[test]
    fn configuration_errors() {
        let (tr, va) = tiny();
        let mcfg = ModelConfig::new(8, 5, Variant::FULL);
        let p = ModelParams::init(&mcfg, 0).unwrap();
        let bad_variant = TrainConfig {
            variant: Variant::NONE,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tr, &va, p.clone(), &mcfg, &bad_variant), Err(Error::Config(_))));
        let no_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tr, &va, p.clone(), &mcfg, &no_epochs), Err(Error::Config(_))));
        assert!(matches!(train(&tr, &[], p.clone(), &mcfg, &TrainConfig::default()), Err(Error::Config(_))));
        let wide = ModelConfig::new(16, 5, Variant::FULL);
        let pw = ModelParams::init(&wide, 0).unwrap();
        assert!(matches!(train(&tr, &va, pw, &wide, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_output_shape() {
        let (tr, va) = tiny();
        let data = SplitData {
            test: va.clone(),
            train: tr,
            val: va,
        };
        let base = TrainConfig {
            epochs: 1,
            learning_rate: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let rows = ablate(&data, &base, false, |r| seen.push(r.variant)).unwrap();
        assert_eq!(seen, Variant::ALL);
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "variant,DS,CF,seed,ACC,AUC,Precision,Recall,F1");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 9 && l.split(',').nth(3) == Some("3")));
        assert!(ablation_table(&rows).contains("w/o DS, w/o CF"));
        let par = ablate(&data, &base, true, |_| {}).unwrap();
        assert_eq!(ablation_csv(&par), csv);
    }
}
