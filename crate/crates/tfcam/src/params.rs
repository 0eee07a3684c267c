//! Learnable parameters and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A named learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Stable handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameters. Order is creation order and
/// is part of the checkpoint contract.
#[derive(Debug, Default, Clone)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Uniform(−1/√fan_in, +1/√fan_in) init, seeded.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Per-forward bridge between a [`ParamSet`] and a [`Tape`]: leafs each
/// used parameter onto the tape and routes gradients back afterwards.
pub struct TapedParams {
    bindings: Vec<(Var, usize)>,
}

impl TapedParams {
    pub fn new() -> Self {
        TapedParams {
            bindings: Vec::new(),
        }
    }

    pub fn var(&mut self, tape: &mut Tape, params: &ParamSet, id: ParamId) -> Var {
        let v = tape.leaf(params.get(id).value.clone());
        self.bindings.push((v, id.0));
        v
    }

    /// Runs backward from `loss` and accumulates ∂loss/∂θ into each
    /// bound parameter's gradient.
    pub fn backward(&self, tape: &Tape, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = tape.backward(loss)?;
        for &(var, idx) in &self.bindings {
            params.params[idx].grad.add_assign(&grads[var.0]);
        }
        Ok(())
    }
}

impl Default for TapedParams {
    fn default() -> Self {
        Self::new()
    }
}

/// Adam with bias correction. State is kept per parameter slot, in
/// parameter order, so identical runs stay bit-identical.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_grad_resets_exactly() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(&[1.0, 2.0]));
        ps.get_mut(id).grad = Tensor::vector(&[3.0, 4.0]);
        ps.zero_grad();
        assert_eq!(ps.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(&[1.5, -2.5]));
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.get(id).value.data(), &[1.5, -2.5]);
    }

    #[test]
    fn adam_first_step_magnitude_near_lr() {
        // constant gradient g: bias-corrected ratio at t=1 is g/|g| → step ≈ lr
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(&[0.0]));
        ps.get_mut(id).grad = Tensor::vector(&[0.37]);
        let mut opt = Adam::new(1e-2);
        opt.step(&mut ps).unwrap();
        let moved = ps.get(id).value.data()[0].abs();
        assert!((moved - 1e-2).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut ps = ParamSet::new();
            let id = ps.add_uniform("w", &[4], 4, &mut rng);
            let mut opt = Adam::new(1e-3);
            for _ in 0..5 {
                let g: Vec<f64> = ps.get(id).value.data().iter().map(|x| x * 0.5).collect();
                ps.get_mut(id).grad = Tensor::vector(&g);
                opt.step(&mut ps).unwrap();
            }
            ps.get(id).value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_aborts_on_non_finite_gradient_naming_param() {
        let mut ps = ParamSet::new();
        let id = ps.add("w_embed", Tensor::vector(&[0.0]));
        ps.get_mut(id).grad = Tensor::vector(&[f64::NAN]);
        let err = Adam::new(1e-3).step(&mut ps).unwrap_err();
        assert!(err.to_string().contains("w_embed"));
    }
}
