//! Dynamic screening of patch features.
//!
//! Each bag gets a random permutation grid over its patches. The grid
//! values, normalized to `[0, 1]`, pass through a two-layer ReLU MLP to give
//! a per-patch encoding. The bag-level column mean of the features is
//! concatenated with each encoding row and a single linear layer plus
//! sigmoid produces one gate value per patch. The screened features are
//! `s = x ⊙ gate + x`.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};
use crate::params::{param_group, uniform_weight};
use crate::rng::Rng;

param_group! {
    /// Weights of the screening block for feature width `L`.
    ScreeningParams, ScreeningVars {
        /// 1 x L
        fc1_w,
        /// 1 x L
        fc1_b,
        /// L x L
        fc2_w,
        /// 1 x L
        fc2_b,
        /// 2L x 1
        gate_w,
        /// 1 x 1
        gate_b,
    }
}

impl ScreeningParams {
    pub fn init(feature_dim: usize, rng: &mut Rng) -> Self {
        let l = feature_dim;
        Self {
            fc1_w: uniform_weight(rng, 1, l),
            fc1_b: Matrix::zeros(1, l),
            fc2_w: uniform_weight(rng, l, l),
            fc2_b: Matrix::zeros(1, l),
            gate_w: uniform_weight(rng, 2 * l, 1),
            gate_b: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        let l = feature_dim;
        Self {
            fc1_w: Matrix::zeros(1, l),
            fc1_b: Matrix::zeros(1, l),
            fc2_w: Matrix::zeros(l, l),
            fc2_b: Matrix::zeros(1, l),
            gate_w: Matrix::zeros(2 * l, 1),
            gate_b: Matrix::zeros(1, 1),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc2_w.rows()
    }
}

/// Permutation grid over patches and its MLP encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEncoding {
    pub grid: Vec<usize>,
    /// N x L
    pub encoded: Matrix,
}

/// How the patch grid is chosen for a forward pass.
pub enum GridPolicy<'a> {
    /// Fresh uniform permutation drawn from the stream.
    Random(&'a mut Rng),
    /// `0, 1, ..., N-1`.
    Identity,
}

impl GridPolicy<'_> {
    pub fn grid(&mut self, n_patches: usize) -> Result<Vec<usize>> {
        match self {
            GridPolicy::Random(rng) => sample_grid(n_patches, rng),
            GridPolicy::Identity => identity_grid(n_patches),
        }
    }
}

/// Uniformly random permutation of `0..n`.
pub fn sample_grid(n_patches: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut grid = identity_grid(n_patches)?;
    grid.shuffle(rng);
    Ok(grid)
}

pub fn identity_grid(n_patches: usize) -> Result<Vec<usize>> {
    if n_patches == 0 {
        return Err(Error::EmptyBag);
    }
    Ok((0..n_patches).collect())
}

/// Grid values scaled by `1 / max(N-1, 1)` as an N x 1 column.
pub fn normalized_grid(grid: &[usize]) -> Result<Matrix> {
    let denom = grid.len().saturating_sub(1).max(1) as f64;
    let values: Vec<f64> = grid.iter().map(|&g| g as f64 / denom).collect();
    Matrix::column_vector(&values)
}

/// Encodes a grid inside `graph`: `fc2(relu(fc1(g)))` row by row.
pub fn encode_grid_in(graph: &mut Graph, vars: &ScreeningVars, grid: &[usize]) -> Result<Var> {
    let g = graph.constant(normalized_grid(grid)?);
    let h = graph.linear(g, vars.fc1_w, vars.fc1_b)?;
    let h = graph.relu(h);
    graph.linear(h, vars.fc2_w, vars.fc2_b)
}

/// Gate and residual selection inside `graph`. Returns `(s, xi)`.
pub fn select_in(graph: &mut Graph, vars: &ScreeningVars, x: Var, encoded: Var) -> Result<(Var, Var)> {
    let (n, l) = graph.value(x).shape();
    let (en, el) = graph.value(encoded).shape();
    if en != n || el != l {
        return Err(Error::Dimension {
            op: "select",
            left: (n, l),
            right: (en, el),
        });
    }
    let bag_mean = graph.mean_rows(x);
    let context = graph.repeat_rows(bag_mean, n)?;
    let gate_in = graph.concat_cols(context, encoded)?;
    let logits = graph.linear(gate_in, vars.gate_w, vars.gate_b)?;
    let xi = graph.sigmoid(logits);
    let gated = graph.mul_col(x, xi)?;
    let s = graph.add(gated, x)?;
    Ok((s, xi))
}

/// Samples (or fixes) a grid and encodes it with `params`.
pub fn encode_grid(n_patches: usize, params: &ScreeningParams, mut policy: GridPolicy<'_>) -> Result<GridEncoding> {
    let grid = policy.grid(n_patches)?;
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let enc = encode_grid_in(&mut graph, &vars, &grid)?;
    Ok(GridEncoding {
        grid,
        encoded: graph.value(enc).clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// N x L screened features.
    pub s: Matrix,
    /// N x 1 gate values in (0, 1).
    pub xi: Matrix,
}

pub fn select(x: &Matrix, enc: &GridEncoding, params: &ScreeningParams) -> Result<Selection> {
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let xv = graph.constant(x.clone());
    let ev = graph.constant(enc.encoded.clone());
    let (s, xi) = select_in(&mut graph, &vars, xv, ev)?;
    Ok(Selection {
        s: graph.value(s).clone(),
        xi: graph.value(xi).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::rng::{grid_stream, stream};
    use rand::Rng as _;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn random_params(l: usize, seed: u64) -> ScreeningParams {
        let mut rng = stream(seed, "test-params", &[]);
        let mut p = ScreeningParams::init(l, &mut rng);
        p.fc1_b = random_matrix(&mut rng, 1, l);
        p.fc2_b = random_matrix(&mut rng, 1, l);
        p.gate_b = random_matrix(&mut rng, 1, 1);
        p
    }

    #[test]
    fn single_patch_with_zero_params() {
        let enc = encode_grid(1, &ScreeningParams::zeros(4), GridPolicy::Identity).unwrap();
        assert_eq!(enc.grid, vec![0]);
        assert_eq!(enc.encoded, Matrix::zeros(1, 4));
    }

    #[test]
    fn empty_bag_is_rejected() {
        let p = ScreeningParams::zeros(4);
        assert!(matches!(encode_grid(0, &p, GridPolicy::Identity), Err(Error::EmptyBag)));
        let mut rng = grid_stream(0, 0, "a");
        assert!(matches!(sample_grid(0, &mut rng), Err(Error::EmptyBag)));
    }

    #[test]
    fn grid_is_deterministic_per_stream_and_a_permutation() {
        let p = random_params(6, 3);
        let a = encode_grid(9, &p, GridPolicy::Random(&mut grid_stream(5, 2, "case_7"))).unwrap();
        let b = encode_grid(9, &p, GridPolicy::Random(&mut grid_stream(5, 2, "case_7"))).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.grid.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn encoding_matches_direct_formula() {
        let l = 7;
        let p = random_params(l, 11);
        let enc = encode_grid(5, &p, GridPolicy::Random(&mut grid_stream(1, 0, "x"))).unwrap();
        for (row, &g) in enc.grid.iter().enumerate() {
            let t = g as f64 / 4.0;
            let hidden: Vec<f64> = (0..l)
                .map(|j| (t * p.fc1_w.get(0, j) + p.fc1_b.get(0, j)).max(0.0))
                .collect();
            for k in 0..l {
                let v: f64 = (0..l).map(|j| hidden[j] * p.fc2_w.get(j, k)).sum::<f64>() + p.fc2_b.get(0, k);
                assert!((enc.encoded.get(row, k) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gate_gives_one_and_a_half_x() {
        let mut rng = stream(2, "x", &[]);
        let x = random_matrix(&mut rng, 5, 4);
        let p = ScreeningParams::zeros(4);
        let enc = encode_grid(5, &p, GridPolicy::Identity).unwrap();
        let sel = select(&x, &enc, &p).unwrap();
        assert!(sel.xi.as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(sel.s, x.scale(1.5));
    }

    #[test]
    fn saturated_gate_doubles_x() {
        let mut rng = stream(4, "x", &[]);
        let x = random_matrix(&mut rng, 3, 4);
        let mut p = ScreeningParams::zeros(4);
        p.gate_b = Matrix::new(1, 1, vec![50.0]).unwrap();
        let enc = encode_grid(3, &p, GridPolicy::Identity).unwrap();
        let sel = select(&x, &enc, &p).unwrap();
        for (s, x) in sel.s.as_slice().iter().zip(x.as_slice()) {
            assert!((s - 2.0 * x).abs() <= 1e-15 * x.abs());
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn select_matches_straight_line_reimplementation() {
        let (n, l) = (4, 8);
        let p = random_params(l, 21);
        let mut rng = stream(22, "x", &[]);
        let x = random_matrix(&mut rng, n, l);
        let enc = encode_grid(n, &p, GridPolicy::Random(&mut grid_stream(9, 1, "c"))).unwrap();
        let sel = select(&x, &enc, &p).unwrap();

        let mean: Vec<f64> = (0..l).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
        for i in 0..n {
            let mut z = p.gate_b.get(0, 0);
            for j in 0..l {
                z += mean[j] * p.gate_w.get(j, 0) + enc.encoded.get(i, j) * p.gate_w.get(l + j, 0);
            }
            let xi = 1.0 / (1.0 + (-z).exp());
            assert!((sel.xi.get(i, 0) - xi).abs() < 1e-12);
            for j in 0..l {
                let s = x.get(i, j) * xi + x.get(i, j);
                assert!((sel.s.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn select_rejects_row_mismatch() {
        let p = ScreeningParams::zeros(3);
        let enc = encode_grid(2, &p, GridPolicy::Identity).unwrap();
        assert!(matches!(select(&Matrix::zeros(3, 3), &enc, &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn screening_gradient_passes_grad_check() {
        let (n, l) = (6, 5);
        let p = random_params(l, 31);
        let mut rng = stream(32, "x", &[]);
        let x = random_matrix(&mut rng, n, l);
        let grid = sample_grid(n, &mut grid_stream(3, 0, "g")).unwrap();

        let run = |p: &ScreeningParams| -> Result<(f64, ScreeningParams)> {
            let mut g = Graph::new();
            let vars = p.bind(&mut g);
            let xv = g.constant(x.clone());
            let enc = encode_grid_in(&mut g, &vars, &grid)?;
            let (s, _) = select_in(&mut g, &vars, xv, enc)?;
            let sq = g.mul(s, s)?;
            let f = g.sum(sq);
            let grads = g.backward(f)?;
            Ok((g.value(f).as_slice()[0], ScreeningParams::from_grads(&vars, &grads)))
        };
        let (_, grads) = run(&p).unwrap();
        let report = grad_check(&p, &grads, 1e-5, |q| Ok(run(q)?.0)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
