//! Central-finite-difference gradient oracle.
//!
//! Evaluates a loss function through the forward path only, never
//! through [`crate::tape::Tape::backward`], so it stays an independent
//! check on the reverse-mode implementation.

use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Central differences: ∂f/∂θ_j ≈ (f(θ+h·e_j) − f(θ−h·e_j)) / 2h,
/// for every entry of every parameter.
pub fn finite_diff_grads(
    params: &ParamSet,
    step: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> Vec<Tensor> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let shape = params.get(crate::params::ParamId(pi)).value.shape().to_vec();
        let n: usize = shape.iter().product();
        let mut grad = vec![0.0; n];
        for j in 0..n {
            let orig = work.get(crate::params::ParamId(pi)).value.data()[j];
            work.get_mut(crate::params::ParamId(pi)).value.data_mut()[j] = orig + step;
            let fp = loss(&work);
            work.get_mut(crate::params::ParamId(pi)).value.data_mut()[j] = orig - step;
            let fm = loss(&work);
            work.get_mut(crate::params::ParamId(pi)).value.data_mut()[j] = orig;
            grad[j] = (fp - fm) / (2.0 * step);
        }
        out.push(Tensor::new(shape, grad).unwrap());
    }
    out
}

/// Relative L2 error ‖a−b‖ / max(‖a‖, ‖b‖, floor) between two gradient
/// tensors. The floor keeps near-zero gradients from inflating the ratio
/// past what central differences can resolve.
pub fn rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
