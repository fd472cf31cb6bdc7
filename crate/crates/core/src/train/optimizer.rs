use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lr_drop_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: Option<f64>,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "initial_lr must be > 0, got {}",
                self.initial_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.lr_drop_factor.is_nan() || self.lr_drop_factor <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "lr_drop_factor must be > 1, got {}",
                self.lr_drop_factor
            )));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- mu * v - lr * g`, then `w <- w + v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl MomentumSgd {
    pub fn new(momentum: f64, params: &[Tensor]) -> Self {
        Self {
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = self.momentum * *v - lr * g;
                *w += *v;
            }
        }
    }
}
