//! Dense tensors and reverse-mode automatic differentiation.
//!
//! Every model computation is recorded on a [`Graph`]. The free functions in
//! this module are eager conveniences that run a single op on constants.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, numeric_grad, relative_error};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};

use crate::Result;

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (va, vb) = (g.borrowed(a, false), g.borrowed(b, false));
    let out = g.matmul(va, vb)?;
    Ok(g.value(out).clone())
}

pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.borrowed(x, false);
    let out = g.softmax(v, axis)?;
    Ok(g.value(out).clone())
}

pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (vx, vg, vb) = (
        g.borrowed(x, false),
        g.borrowed(gain, false),
        g.borrowed(bias, false),
    );
    let out = g.layer_norm(vx, vg, vb, eps)?;
    Ok(g.value(out).clone())
}

/// Masked mean cross-entropy of `logits: [..., V]` against integer targets.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize], mask: &[bool]) -> Result<T> {
    let mut g = Graph::new();
    let v = g.borrowed(logits, false);
    let out = g.cross_entropy(v, targets, mask)?;
    g.value(out).item()
}
