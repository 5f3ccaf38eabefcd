use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::scalar::Scalar;

/// Local optimiser settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Proximal coefficient; zero disables the term.
    pub prox_mu: f64,
    pub temperature: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            local_epochs: 5,
            prox_mu: 0.0,
            temperature: 1.0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !(self.prox_mu >= 0.0) {
            return Err(Error::arg("weight_decay and prox_mu must be non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::arg("temperature must be positive"));
        }
        Ok(())
    }
}

/// Per-parameter velocity buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState<T> {
    velocity: Vec<T>,
}

impl<T: Scalar> MomentumState<T> {
    pub fn new(p: &ModelParams<T>) -> Self {
        Self {
            velocity: vec![T::zero(); p.len()],
        }
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }
}

/// `v ← momentum·v + g + weight_decay·p`, then `p ← p − lr·v`.
pub fn sgd_step<T: Scalar>(
    p: &mut ModelParams<T>,
    g: &Gradients<T>,
    opt: &OptConfig,
    state: &mut MomentumState<T>,
) -> Result<()> {
    if g.values().len() != p.len() || state.velocity.len() != p.len() {
        return Err(Error::arg("parameter, gradient and momentum shapes differ"));
    }
    let (lr, mom, wd) = (T::of(opt.lr), T::of(opt.momentum), T::of(opt.weight_decay));
    for ((v, &gi), pi) in state.velocity.iter_mut().zip(g.values()).zip(p.values_mut()) {
        *v = mom * *v + gi + wd * *pi;
        *pi -= lr * *v;
    }
    Ok(())
}
