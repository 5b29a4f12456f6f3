use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// A collection of named matrices, visited in a stable order.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Free-form named parameter map, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedParams(pub BTreeMap<String, Matrix>);

impl Parameters for NamedParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.0.iter().map(|(k, v)| (k.clone(), v)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.0.iter_mut().map(|(k, v)| (k.clone(), v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all scalar parameters.
    pub max_rel_error: f64,
    /// `name[index]` of the worst scalar.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss` must be a pure function of the parameters; `analytic` holds its
/// gradient in the same layout as `params`. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<P, F>(params: &P, analytic: &P, step: f64, loss: F) -> Result<GradCheckReport>
where
    P: Parameters,
    F: Fn(&P) -> Result<f64>,
{
    check(params, analytic, step, |work, t, i, name| {
        let original = entry(work, t, i, None);
        entry(work, t, i, Some(original + step));
        let plus = loss(work)?;
        entry(work, t, i, Some(original - step));
        let minus = loss(work)?;
        entry(work, t, i, Some(original));
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("perturbing {name}[{i}]"),
            });
        }
        Ok(plus - minus)
    })
}

/// [`grad_check`] for losses recorded on a [`Graph`].
///
/// `build` records the loss at the given parameters and returns the graph
/// with its scalar root. `f(θ+h) − f(θ−h)` is then taken with
/// [`Graph::difference`] rather than by subtracting two rounded losses, so
/// parameters whose gradient is far below the loss's rounding noise are
/// still checked meaningfully.
pub fn grad_check_graph<P, F>(params: &P, analytic: &P, step: f64, build: F) -> Result<GradCheckReport>
where
    P: Parameters,
    F: Fn(&P) -> Result<(Graph, Var)>,
{
    check(params, analytic, step, |work, t, i, name| {
        let original = entry(work, t, i, None);
        entry(work, t, i, Some(original + step));
        let (plus, root) = build(work)?;
        entry(work, t, i, Some(original - step));
        let (minus, minus_root) = build(work)?;
        entry(work, t, i, Some(original));
        let finite = |g: &Graph, r: Var| g.value(r).as_slice().iter().all(|v| v.is_finite());
        if root != minus_root || !finite(&plus, root) || !finite(&minus, root) {
            return Err(Error::NonFiniteLoss {
                context: format!("perturbing {name}[{i}]"),
            });
        }
        let diff = Graph::difference(&plus, &minus, root)?;
        diff.scalar()
            .ok_or_else(|| Error::config("loss graph root is not a scalar"))
    })
}

fn check<P, F>(params: &P, analytic: &P, step: f64, mut diff: F) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&mut P, usize, usize, &str) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {step}")));
    }
    let layout: Vec<(String, usize)> = params.tensors().iter().map(|(n, m)| (n.clone(), m.len())).collect();
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.as_slice().to_vec()))
        .collect();
    if layout.len() != analytic.len()
        || layout.iter().zip(&analytic).any(|((n, len), (gn, g))| n != gn || *len != g.len())
    {
        return Err(Error::config("analytic gradient layout differs from parameters"));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, ((name, len), (_, grad))) in layout.iter().zip(&analytic).enumerate() {
        debug_assert_eq!(*len, grad.len());
        for (i, &a) in grad.iter().enumerate() {
            let numeric = diff(&mut work, t, i, name)? / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_empty() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{i}]");
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Reads scalar `i` of tensor `t`, optionally overwriting it first.
fn entry<P: Parameters>(params: &mut P, t: usize, i: usize, set: Option<f64>) -> f64 {
    let mut tensors = params.tensors_mut();
    let slot = &mut tensors[t].1.as_mut_slice()[i];
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_params() -> NamedParams {
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), Matrix::row_vector(&[0.3, -1.2, 2.0]).unwrap());
        map.insert("b".to_string(), Matrix::from_rows(&[vec![1.5], vec![-0.25]]).unwrap());
        NamedParams(map)
    }

    fn quadratic_loss(p: &NamedParams) -> Result<(f64, NamedParams)> {
        // f = sum(a ⊙ a) * 3 + sum(b ⊙ b)
        let mut g = Graph::new();
        let a = g.param(p.0["a"].clone());
        let b = g.param(p.0["b"].clone());
        let aa = g.mul(a, a)?;
        let sa = g.sum(aa);
        let sa3 = g.scale(sa, 3.0);
        let bb = g.mul(b, b)?;
        let sb = g.sum(bb);
        let f = g.add(sa3, sb)?;
        let grads = g.backward(f)?;
        let mut out = p.clone();
        out.0.insert("a".into(), grads.grad(a));
        out.0.insert("b".into(), grads.grad(b));
        Ok((g.value(f).as_slice()[0], out))
    }

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let p = quadratic_params();
        let (_, grads) = quadratic_loss(&p).unwrap();
        let report = grad_check(&p, &grads, 1e-5, |q| Ok(quadratic_loss(q)?.0)).unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = quadratic_params();
        let (_, mut grads) = quadratic_loss(&p).unwrap();
        grads.0.insert("b".into(), Matrix::zeros(2, 1));
        let report = grad_check(&p, &grads, 1e-5, |q| Ok(quadratic_loss(q)?.0)).unwrap();
        assert!(report.max_rel_error > 0.5);
        assert!(report.worst.starts_with("b["));
    }

    #[test]
    fn rejects_bad_step() {
        let p = quadratic_params();
        assert!(grad_check(&p, &p, 0.0, |q| Ok(quadratic_loss(q)?.0)).is_err());
        let mut wrong = p.clone();
        wrong.0.remove("a");
        assert!(grad_check(&p, &wrong, 1e-5, |q| Ok(quadratic_loss(q)?.0)).is_err());
    }
}
