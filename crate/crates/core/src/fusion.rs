//! Clinical-enhanced fusion.
//!
//! The clinical vector and the bag mean build `m` query tokens `C` (one
//! per indicator). `C` attends over the image keys and values to give
//! `V_c`. The image queries then attend over `C` and read `V_c`, producing
//! one fused row per patch.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};
use crate::params::{param_group, uniform_weight};
use crate::rng::Rng;

param_group! {
    /// Fusion weights for feature width `L` and `m` clinical indicators.
    /// The attention width equals `L`.
    FusionParams, FusionVars {
        /// (m + L) x L
        cq1_w,
        /// 1 x L
        cq1_b,
        /// L x (m L)
        cq2_w,
        /// 1 x (m L)
        cq2_b,
        /// L x L
        w_q,
        /// L x L
        w_k,
        /// L x L
        w_v,
    }
}

impl FusionParams {
    pub fn init(feature_dim: usize, clinical_dim: usize, rng: &mut Rng) -> Self {
        let (l, m) = (feature_dim, clinical_dim);
        Self {
            cq1_w: uniform_weight(rng, m + l, l),
            cq1_b: Matrix::zeros(1, l),
            cq2_w: uniform_weight(rng, l, m * l),
            cq2_b: Matrix::zeros(1, m * l),
            w_q: uniform_weight(rng, l, l),
            w_k: uniform_weight(rng, l, l),
            w_v: uniform_weight(rng, l, l),
        }
    }

    pub fn zeros(feature_dim: usize, clinical_dim: usize) -> Self {
        let (l, m) = (feature_dim, clinical_dim);
        Self {
            cq1_w: Matrix::zeros(m + l, l),
            cq1_b: Matrix::zeros(1, l),
            cq2_w: Matrix::zeros(l, m * l),
            cq2_b: Matrix::zeros(1, m * l),
            w_q: Matrix::zeros(l, l),
            w_k: Matrix::zeros(l, l),
            w_v: Matrix::zeros(l, l),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn clinical_dim(&self) -> usize {
        self.cq1_w.rows() - self.feature_dim()
    }
}

/// Normalized clinical indicators, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalVector(Vec<f64>);

impl ClinicalVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("clinical vector is empty"));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!(
                "clinical indicator {i} = {v} is outside [0, 1]; normalize before use"
            )));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn to_row(&self) -> Matrix {
        Matrix::row_vector(&self.0).expect("validated clinical vector")
    }
}

/// Variables produced by one fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    /// m x L clinical query tokens.
    pub clinical_query: Var,
    /// m x N weights of the clinical query attention.
    pub clinical_attention: Var,
    /// m x L
    pub clinical_values: Var,
    /// N x m weights of the shared attention.
    pub shared_attention: Var,
    /// N x L
    pub h: Var,
}

/// Builds the `m x L` clinical query tokens inside `graph`.
///
/// `relu([c, mean(x)] · cq1 + b1) · cq2 + b2`, reshaped to `m x L` and,
/// when `scale_pooling` is set, multiplied by `1/sqrt(L)`.
pub fn build_clinical_query_in(
    graph: &mut Graph,
    vars: &FusionVars,
    clinical: Var,
    x: Var,
    scale_pooling: bool,
) -> Result<Var> {
    let l = graph.value(x).cols();
    let m = graph.value(clinical).cols();
    let expected = graph.value(vars.cq1_w).rows();
    if m + l != expected || graph.value(vars.cq2_w).cols() != m * l {
        return Err(Error::config(format!(
            "fusion weights expect {} clinical indicators and width {}, got {m} and {l}",
            expected.saturating_sub(graph.value(vars.w_q).rows()),
            graph.value(vars.w_q).rows(),
        )));
    }
    let bag_mean = graph.mean_rows(x);
    let u = graph.concat_cols(clinical, bag_mean)?;
    let t = graph.linear(u, vars.cq1_w, vars.cq1_b)?;
    let t = graph.relu(t);
    let r = graph.linear(t, vars.cq2_w, vars.cq2_b)?;
    let c = graph.reshape(r, m, l)?;
    Ok(if scale_pooling {
        graph.scale(c, 1.0 / (l as f64).sqrt())
    } else {
        c
    })
}

/// `softmax(query · keyᵀ / sqrt(d)) · value`. Returns `(output, weights)`.
pub fn attention_in(graph: &mut Graph, query: Var, key: Var, value: Var) -> Result<(Var, Var)> {
    let (q, k, v) = (graph.value(query).shape(), graph.value(key).shape(), graph.value(value).shape());
    if q.1 != k.1 {
        return Err(Error::Dimension {
            op: "attention query/key",
            left: q,
            right: k,
        });
    }
    if k.0 != v.0 {
        return Err(Error::Dimension {
            op: "attention key/value",
            left: k,
            right: v,
        });
    }
    let kt = graph.transpose(key);
    let scores = graph.matmul(query, kt)?;
    let scores = graph.scale(scores, 1.0 / (q.1 as f64).sqrt());
    let weights = graph.softmax_rows(scores);
    let out = graph.matmul(weights, value)?;
    Ok((out, weights))
}

/// Full clinical-enhanced fusion of raw bag features `x` (N x L) with the
/// clinical row `clinical` (1 x m).
pub fn fusion_in(
    graph: &mut Graph,
    vars: &FusionVars,
    x: Var,
    clinical: Var,
    scale_pooling: bool,
) -> Result<FusionOutput> {
    let clinical_query = build_clinical_query_in(graph, vars, clinical, x, scale_pooling)?;
    let q = graph.matmul(x, vars.w_q)?;
    let k = graph.matmul(x, vars.w_k)?;
    let v = graph.matmul(x, vars.w_v)?;
    let (clinical_values, clinical_attention) = attention_in(graph, clinical_query, k, v)?;
    let (h, shared_attention) = attention_in(graph, q, clinical_query, clinical_values)?;
    Ok(FusionOutput {
        clinical_query,
        clinical_attention,
        clinical_values,
        shared_attention,
        h,
    })
}

fn eval_attention(query: &Matrix, key: &Matrix, value: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(query.clone()), g.constant(key.clone()), g.constant(value.clone()));
    let (out, _) = attention_in(&mut g, q, k, v)?;
    Ok(g.value(out).clone())
}

pub fn build_clinical_query(
    clinical: &ClinicalVector,
    x: &Matrix,
    params: &FusionParams,
    scale_pooling: bool,
) -> Result<Matrix> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let c = g.constant(clinical.to_row());
    let xv = g.constant(x.clone());
    let out = build_clinical_query_in(&mut g, &vars, c, xv, scale_pooling)?;
    Ok(g.value(out).clone())
}

/// `V_c = softmax(C Kᵀ / sqrt(d)) V`.
pub fn clinical_query_attention(c: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    eval_attention(c, k, v)
}

/// `h = softmax(Q Cᵀ / sqrt(d)) V_c`.
pub fn clinical_shared_attention(q: &Matrix, c: &Matrix, v_c: &Matrix) -> Result<Matrix> {
    eval_attention(q, c, v_c)
}

/// Screened features first, fused features second.
pub fn fuse(s: &Matrix, h: &Matrix) -> Result<Matrix> {
    s.concat_cols(h)
}
