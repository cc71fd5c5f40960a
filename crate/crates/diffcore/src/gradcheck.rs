//! Central finite-difference verification of tape gradients.

use crate::error::DiffError;
use crate::graph::{Graph, Var};

/// Maximum relative disagreement between the tape gradient of `op` at
/// `probe` and its central-difference estimate with the given `step`.
///
/// The error is `max_i |analytic_i - central_i|` over the largest gradient
/// magnitude of either estimate (floored at 1e-12), so elements far below
/// the tensor's scale are not judged on rounding noise alone.
/// `op` must map the probe to a single-element tensor. Its error type only
/// needs to absorb [`DiffError`], so callers can check their own composites.
pub fn gradcheck<F, E>(op: F, shape: &[usize], probe: &[f64], step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<DiffError>,
{
    let analytic = analytic_grad(&op, shape, probe)?;
    let mut x = probe.to_vec();
    let mut central = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = eval(&op, shape, &x)?;
        x[i] = orig - step;
        let minus = eval(&op, shape, &x)?;
        x[i] = orig;
        central.push((plus - minus) / (2.0 * step));
    }
    let scale = analytic.iter().chain(&central).fold(1e-12f64, |m, v| m.max(v.abs()));
    let worst = analytic.iter().zip(&central).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
    Ok(worst / scale)
}

pub fn analytic_grad<F, E>(op: &F, shape: &[usize], probe: &[f64]) -> Result<Vec<f64>, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut g = Graph::new();
    let x = g.param(shape, probe.to_vec())?;
    let y = op(&mut g, x)?;
    g.backward(y)?;
    Ok(g.grad(x).to_vec())
}

fn eval<F, E>(op: &F, shape: &[usize], x: &[f64]) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut g = Graph::new();
    let v = g.constant(shape, x.to_vec())?;
    let y = op(&mut g, v)?;
    if g.value(y).len() != 1 {
        return Err(DiffError::NonScalarRoot(g.shape(y).to_vec()).into());
    }
    Ok(g.item(y))
}
