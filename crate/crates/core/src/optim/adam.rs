use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkShape, ParamVector};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.delta > 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "adam needs beta1, beta2 in [0, 1) and delta > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates of one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
    // β₁ᵏ and β₂ᵏ
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        AdamState {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    /// One Adam update of `params` along the direction `grad` with step `dt`.
    /// A non-finite gradient leaves both the state and `params` untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], dt: f64) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                what: "adam gradient length",
                expected: self.first.len(),
                found: grad.len(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", index });
        }
        let AdamConfig { beta1, beta2, delta } = self.config;
        self.beta1_pow *= beta1;
        self.beta2_pow *= beta2;
        let c1 = 1.0 - self.beta1_pow;
        let c2 = 1.0 - self.beta2_pow;
        for i in 0..params.len() {
            let g = grad[i];
            let s = beta1 * self.first[i] + (1.0 - beta1) * g;
            let r = beta2 * self.second[i] + (1.0 - beta2) * g * g;
            self.first[i] = s;
            self.second[i] = r;
            params[i] -= dt * (s / c1) / ((r / c2).sqrt() + delta);
        }
        self.steps += 1;
        Ok(())
    }
}

/// Fan-in uniform initialisation: hidden weights and biases from
/// `U(-1/√d, 1/√d)`, output weights from `U(-1/√M, 1/√M)`.
pub fn fan_in_uniform(shape: &NetworkShape, seed: u64) -> ParamVector {
    let mut rng = stream(seed, Domain::Init, 0, 0);
    let d = shape.input_dim;
    let hidden = 1.0 / (d as f64).sqrt();
    let output = 1.0 / (shape.width as f64).sqrt();
    let mut values = Vec::with_capacity(shape.param_count());
    for _ in 0..shape.width {
        for _ in 0..=d {
            values.push(rng.random_range(-hidden..hidden));
        }
        for _ in 0..shape.output_dim {
            values.push(rng.random_range(-output..output));
        }
    }
    ParamVector::from_vec(values)
}
