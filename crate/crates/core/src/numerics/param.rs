use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Handle into a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A learnable tensor together with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
    /// Frozen parameters still receive gradients but are skipped by the optimizer.
    pub frozen: bool,
    /// Whether this tensor counts towards the `λ‖Θ‖²` weight penalty.
    pub regularized: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
            frozen: false,
            regularized: true,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Adam hyperparameters. Only the learning rate is tuned; the moments use
/// the conventional defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// One bias-corrected Adam update. Zeroes the gradient and bumps the step
/// counter. A non-finite gradient is rejected before anything is touched.
pub fn adam_step(param: &mut Parameter, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", param.name)));
    }
    param.step_count += 1;
    let t = param.step_count as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let value = param.value.as_mut_slice();
    let m = param.adam_m.as_mut_slice();
    let v = param.adam_v.as_mut_slice();
    for (idx, g) in param.grad.as_mut_slice().iter_mut().enumerate() {
        m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * *g;
        v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * *g * *g;
        let m_hat = m[idx] / bc1;
        let v_hat = v[idx] / bc2;
        value[idx] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        *g = 0.0;
    }
    Ok(())
}

/// Owns every learnable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
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

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Applies Adam to every non-frozen parameter; frozen ones only get their
    /// gradient cleared.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for p in &mut self.params {
            if p.frozen {
                p.zero_grad();
            } else {
                adam_step(p, cfg)?;
            }
        }
        Ok(())
    }

    /// Returns the name of the first parameter holding NaN/Inf, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.value.is_finite())
            .map(|p| p.name.as_str())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::NonFinite(format!("parameter {name}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Parameter {
        Parameter::new("x", Matrix::row_vector(&[x]))
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.7, -0.002, 1e4] {
            let mut p = scalar(1.0);
            p.grad.set(0, 0, g);
            adam_step(&mut p, &AdamConfig::with_learning_rate(0.01)).unwrap();
            let delta = 1.0 - p.value.get(0, 0);
            assert!((delta.abs() - 0.01).abs() < 1e-6, "g={g} delta={delta}");
            assert_eq!(delta.signum(), g.signum());
            assert_eq!(p.grad.get(0, 0), 0.0);
            assert_eq!(p.step_count, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar(0.25);
        for _ in 0..20 {
            adam_step(&mut p, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.value.get(0, 0), 0.25);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(0.0);
        p.grad.set(0, 0, f64::NAN);
        let err = adam_step(&mut p, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains('x'));
        assert_eq!(p.step_count, 0);
    }

    // Scalar reference Adam written independently of `adam_step`.
    fn reference_adam(mut x: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn minimises_quadratic_like_reference() {
        let mut p = scalar(0.0);
        let cfg = AdamConfig::with_learning_rate(0.1);
        for _ in 0..100 {
            let x = p.value.get(0, 0);
            p.grad.set(0, 0, 2.0 * (x - 3.0));
            adam_step(&mut p, &cfg).unwrap();
        }
        let x = p.value.get(0, 0);
        let reference = reference_adam(0.0, 0.1, 100);
        assert!((x - reference).abs() < 1e-12);
        assert!((x - 3.0).abs() < 0.1, "x = {x}");
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParameterStore::new();
        let id = store.add(scalar(1.0));
        store.get_mut(id).frozen = true;
        store.get_mut(id).grad.set(0, 0, 5.0);
        store.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(store.value(id).get(0, 0), 1.0);
        assert_eq!(store.get(id).grad.get(0, 0), 0.0);
    }
}
