//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is an append-only list of nodes. Every primitive call
//! evaluates eagerly and records its parents, so creation order is already
//! a topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use dscenet::numerics::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let x = g.param(Matrix::row_vector(&[1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let f = g.sum(sq);
//! let grads = g.backward(f).unwrap();
//! assert_eq!(grads.grad(x).as_slice(), &[2.0, 4.0, 6.0]);
//! ```

use super::matrix::{log_sum_exp, softmax_in_place, Matrix};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Mul,
    MulCol,
    Scale,
    Sigmoid,
    Relu,
    Tanh,
    SoftmaxRows,
    MeanRows,
    ConcatCols,
    Reshape,
    Sum,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    Sum(Var),
    CrossEntropy(Var, usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::MulCol(..) => OpKind::MulCol,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only compute graph. Confined to one thread.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros if `var` does not
    /// influence the root.
    pub fn grad(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// `true` if some gradient signal reached `var`.
    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corrupts the backward rule of `kind` by doubling the gradient it
    /// emits. Exists so gradient checks can be shown to catch broken rules.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf. Gradients are not propagated into constants.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var {
        let value = f(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>) -> Result<Var> {
        let value = f(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul(a, b), Matrix::matmul)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a), Matrix::transpose)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), Matrix::add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), Matrix::mul)
    }

    /// `a` (N×L) scaled row-wise by the column `col` (N×1). This is the only
    /// broadcast the primitive set supports.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.binary(a, col, Op::MulCol(a, col), Matrix::mul_col)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |m| m.scale(c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), Matrix::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), Matrix::relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), Matrix::tanh)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.unary(a, Op::SoftmaxRows(a), Matrix::softmax_rows)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.unary(a, Op::MeanRows(a), Matrix::mean_rows)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::ConcatCols(a, b), Matrix::concat_cols)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(rows, cols)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sum(a), |m| Matrix::from_parts(1, 1, vec![m.sum()]))
    }

    /// `-log softmax(logits)[label]` for a single row of logits, evaluated
    /// in log space.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: z.shape(),
                right: (1, z.cols()),
            });
        }
        if label >= z.cols() {
            return Err(Error::LabelOutOfRange(label));
        }
        let loss = log_sum_exp(z.as_slice()) - z.as_slice()[label];
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Matrix::from_parts(1, 1, vec![loss]),
            Op::CrossEntropy(logits, label),
            rg,
        ))
    }

    /// Replicates a `1 x c` row `n` times. Expressed as `ones(n,1) · row` so
    /// it needs no broadcast primitive.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let ones = self.constant(Matrix::ones(n, 1));
        self.matmul(ones, row)
    }

    /// `x · w + b` with the `1 x out` bias repeated over the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let n = self.value(x).rows();
        let bias = self.repeat_rows(b, n)?;
        self.add(xw, bias)
    }

    /// Reverse sweep from a 1x1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::ones(1, 1));

        for i in (0..=root.0).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let factor = if self.fault == Some(node.op.kind()) { 2.0 } else { 1.0 };
            for (parent, g) in self.local_grads(node, &upstream)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                let g = if factor != 1.0 { g.scale(factor) } else { g };
                accumulate(&mut grads[parent.0], g);
            }
            grads[i] = Some(upstream);
        }

        let shapes = self.nodes[..=root.0].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node, up: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        Ok(match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if wants(a) {
                    v.push((a, up.matmul(&val(b).transpose())?));
                }
                if wants(b) {
                    v.push((b, val(a).transpose().matmul(up)?));
                }
                v
            }
            Op::Transpose(a) => vec![(a, up.transpose())],
            Op::Add(a, b) => vec![(a, up.clone()), (b, up.clone())],
            Op::Mul(a, b) => vec![(a, up.mul(val(b))?), (b, up.mul(val(a))?)],
            Op::MulCol(a, col) => {
                let x = val(a);
                let dcol = up
                    .as_slice()
                    .chunks(x.cols())
                    .zip(x.as_slice().chunks(x.cols()))
                    .map(|(u, xr)| u.iter().zip(xr).map(|(p, q)| p * q).sum())
                    .collect();
                vec![
                    (a, up.mul_col(val(col))?),
                    (col, Matrix::from_parts(x.rows(), 1, dcol)),
                ]
            }
            Op::Scale(a, c) => vec![(a, up.scale(c))],
            Op::Sigmoid(a) => vec![(a, up.mul(&out.map(|y| y * (1.0 - y)))?)],
            Op::Relu(a) => {
                let mask = val(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, up.mul(&mask)?)]
            }
            Op::Tanh(a) => vec![(a, up.mul(&out.map(|y| 1.0 - y * y))?)],
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for (y, u) in out.as_slice().chunks(cols).zip(up.as_slice().chunks(cols)) {
                    let dot: f64 = y.iter().zip(u).map(|(p, q)| p * q).sum();
                    d.extend(y.iter().zip(u).map(|(p, q)| p * (q - dot)));
                }
                vec![(a, Matrix::from_parts(out.rows(), cols, d))]
            }
            Op::MeanRows(a) => {
                let n = val(a).rows();
                let row = up.scale(1.0 / n as f64);
                let ones = Matrix::ones(n, 1);
                vec![(a, ones.matmul(&row)?)]
            }
            Op::ConcatCols(a, b) => {
                let split = val(a).cols();
                vec![
                    (a, up.slice_cols(0, split)?),
                    (b, up.slice_cols(split, up.cols())?),
                ]
            }
            Op::Reshape(a) => {
                let (r, c) = val(a).shape();
                vec![(a, up.reshape(r, c)?)]
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                let s = up.as_slice()[0];
                vec![(a, Matrix::from_parts(r, c, vec![s; r * c]))]
            }
            Op::CrossEntropy(a, label) => {
                let mut p = val(a).as_slice().to_vec();
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                let s = up.as_slice()[0];
                p.iter_mut().for_each(|v| *v *= s);
                vec![(a, Matrix::from_parts(1, p.len(), p))]
            }
        })
    }
}

impl Graph {
    /// `value(var)` in `plus` minus `value(var)` in `minus`, for two graphs
    /// recorded by the same program at nearby inputs.
    ///
    /// The difference is carried through every node with rules that never
    /// subtract two nearly equal values, so a tiny change in a leaf survives
    /// to the output instead of being lost to rounding in either evaluation.
    pub fn difference(plus: &Graph, minus: &Graph, var: Var) -> Result<Matrix> {
        if plus.nodes.len() <= var.0 || minus.nodes.len() <= var.0 {
            return Err(Error::config("difference: node is not part of both graphs"));
        }
        let mut diffs: Vec<Matrix> = Vec::with_capacity(var.0 + 1);
        for (i, (p, m)) in plus.nodes[..=var.0].iter().zip(&minus.nodes).enumerate() {
            if p.op != m.op || p.value.shape() != m.value.shape() {
                return Err(Error::config(format!("difference: graphs diverge at node {i}")));
            }
            let d = |v: Var| &diffs[v.0];
            let vp = |v: Var| &plus.nodes[v.0].value;
            let vm = |v: Var| &minus.nodes[v.0].value;
            let next = match p.op {
                Op::Leaf => p.value.sub(&m.value)?,
                Op::MatMul(a, b) => d(a).matmul(vp(b))?.add(&vm(a).matmul(d(b))?)?,
                Op::Transpose(a) => d(a).transpose(),
                Op::Add(a, b) => d(a).add(d(b))?,
                Op::Mul(a, b) => d(a).mul(vp(b))?.add(&vm(a).mul(d(b))?)?,
                Op::MulCol(a, col) => d(a).mul_col(vp(col))?.add(&vm(a).mul_col(d(col))?)?,
                Op::Scale(a, c) => d(a).scale(c),
                Op::Sigmoid(a) => zip3(vm(a), d(a), &p.value, &m.value, |x, dx, yp, ym| {
                    if x >= 0.0 {
                        -yp * ym * (-x).exp() * (-dx).exp_m1()
                    } else {
                        (1.0 - yp) * (1.0 - ym) * x.exp() * dx.exp_m1()
                    }
                }),
                Op::Relu(a) => zip3(vm(a), d(a), vp(a), &m.value, |x, dx, xp, ym| {
                    match (xp > 0.0, x > 0.0) {
                        (true, true) => dx,
                        (false, false) => 0.0,
                        _ => xp.max(0.0) - ym,
                    }
                }),
                Op::Tanh(a) => zip3(vm(a), d(a), vp(a), &m.value, |x, dx, xp, _| {
                    dx.sinh() / (xp.cosh() * x.cosh())
                }),
                Op::SoftmaxRows(a) => {
                    let cols = m.value.cols();
                    let mut out = Vec::with_capacity(m.value.len());
                    for (s, dx) in m.value.as_slice().chunks(cols).zip(d(a).as_slice().chunks(cols)) {
                        let dlse = log_sum_exp_shift(s, dx);
                        out.extend(s.iter().zip(dx).map(|(s, dx)| s * (dx - dlse).exp_m1()));
                    }
                    Matrix::from_parts(m.value.rows(), cols, out)
                }
                Op::MeanRows(a) => d(a).mean_rows(),
                Op::ConcatCols(a, b) => d(a).concat_cols(d(b))?,
                Op::Reshape(a) => {
                    let (r, c) = p.value.shape();
                    d(a).reshape(r, c)?
                }
                Op::Sum(a) => Matrix::from_parts(1, 1, vec![d(a).sum()]),
                Op::CrossEntropy(a, label) => {
                    let mut probs = vm(a).as_slice().to_vec();
                    softmax_in_place(&mut probs);
                    let dz = d(a).as_slice();
                    Matrix::from_parts(1, 1, vec![log_sum_exp_shift(&probs, dz) - dz[label]])
                }
            };
            diffs.push(next);
        }
        Ok(diffs.pop().expect("at least one node"))
    }
}

/// `ln(sum_j s_j exp(d_j))` for a probability row `s`, which is the shift
/// of a log-sum-exp when its arguments move by `d`.
fn log_sum_exp_shift(s: &[f64], d: &[f64]) -> f64 {
    s.iter().zip(d).map(|(s, d)| s * d.exp_m1()).sum::<f64>().ln_1p()
}

fn zip3(x: &Matrix, dx: &Matrix, a: &Matrix, b: &Matrix, f: impl Fn(f64, f64, f64, f64) -> f64) -> Matrix {
    let data = x
        .as_slice()
        .iter()
        .zip(dx.as_slice())
        .zip(a.as_slice().iter().zip(b.as_slice()))
        .map(|((&x, &dx), (&a, &b))| f(x, dx, a, b))
        .collect();
    Matrix::from_parts(x.rows(), x.cols(), data)
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
