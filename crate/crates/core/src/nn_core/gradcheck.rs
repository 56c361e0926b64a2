//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::nn_core::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Compares `f`'s analytic gradient against central differences at `x`.
///
/// `f` returns the scalar value and its gradient with respect to its argument.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    let (v0, analytic) = f(x)?;
    if !v0.is_finite() || !analytic.all_finite() {
        return Err(Error::Numerical("non-finite value or analytic gradient".into()));
    }
    if analytic.shape() != x.shape() {
        return Err(Error::Shape("analytic gradient shape differs from input".into()));
    }
    let mut probe = x.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, passed: true };
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!("non-finite value while perturbing element {i}")));
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_err {
            report = GradCheckReport { max_rel_err: err, worst_index: i, analytic: a, numeric, passed: true };
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

/// Adapts a graph-building closure into a scalar function for [`grad_check`].
/// Non-scalar outputs are summed.
pub fn graph_fn<B>(build: B) -> impl Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>
where
    B: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    move |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let y = build(&mut g, xv)?;
        let root = if g.value(y).len() == 1 { y } else { g.sum(y) };
        let value = g.value(root).item();
        g.backward(root)?;
        let grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        Ok((value, grad))
    }
}
