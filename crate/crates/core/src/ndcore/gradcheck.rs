use super::{Graph, Tensor, Var};
use crate::Result;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of a scalar function of `x`.
pub fn numeric_grad(
    f: impl Fn(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Compares the tape gradient of `f` at `x` against central differences and
/// returns the maximum relative error over all entries.
///
/// `f` receives a fresh graph and the variable holding `x` and must return a
/// one-element output.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let numeric = numeric_grad(
        |probe| {
            let mut g = Graph::new();
            let xv = g.constant(probe.clone());
            let out = f(&mut g, xv)?;
            g.value(out).item()
        },
        x,
        eps,
    )?;

    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
