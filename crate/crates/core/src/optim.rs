//! Adaptive gradient descent with decoupled weight decay, plus the shared
//! optimizer settings.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::LossWeights;
use crate::silhouette::SoftRasterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Differentiate the silhouette term through the soft rasterizer.
    Analytic,
    /// Central differences of the silhouette term over the parameters.
    FiniteDifference,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("learning_rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("steps must be at least 1")]
    Steps,
    #[error("fd_epsilon must be positive and finite, got {0}")]
    FdEpsilon(f64),
    #[error("weight_decay must be nonnegative and finite, got {0}")]
    WeightDecay(f64),
    #[error("adam betas must lie in [0, 1), got {0} and {1}")]
    Betas(f64, f64),
    #[error("invalid loss weights")]
    Weights,
    #[error("invalid silhouette settings")]
    Silhouette,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub weights: LossWeights,
    pub weight_decay: f64,
    pub gradient_mode: GradientMode,
    pub fd_epsilon: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub silhouette: SoftRasterConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 5e-3,
            steps: 4000,
            weights: LossWeights::default(),
            weight_decay: 0.0,
            gradient_mode: GradientMode::FiniteDifference,
            fd_epsilon: 1e-3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            silhouette: SoftRasterConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::LearningRate(self.learning_rate));
        }
        if self.steps == 0 {
            return Err(ConfigError::Steps);
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return Err(ConfigError::FdEpsilon(self.fd_epsilon));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::WeightDecay(self.weight_decay));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(ConfigError::Betas(self.beta1, self.beta2));
        }
        self.weights.validate().map_err(|_| ConfigError::Weights)?;
        self.silhouette.validate().map_err(|_| ConfigError::Silhouette)?;
        Ok(())
    }
}

/// AdamW state for a fixed-size parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW<const N: usize> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: SVector<f64, N>,
    v: SVector<f64, N>,
    t: i32,
}

impl<const N: usize> AdamW<N> {
    pub fn new(config: &OptimConfig) -> Self {
        AdamW {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            weight_decay: config.weight_decay,
            m: SVector::zeros(),
            v: SVector::zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut SVector<f64, N>, grad: &SVector<f64, N>) {
        self.t += 1;
        self.m = self.m * self.beta1 + grad * (1.0 - self.beta1);
        self.v = self.v * self.beta2 + grad.component_mul(grad) * (1.0 - self.beta2);
        let mc = 1.0 - self.beta1.powi(self.t);
        let vc = 1.0 - self.beta2.powi(self.t);
        *x *= 1.0 - self.lr * self.weight_decay;
        for i in 0..N {
            let m_hat = self.m[i] / mc;
            let v_hat = self.v[i] / vc;
            x[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
