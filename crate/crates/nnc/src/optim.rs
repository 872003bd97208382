//! Adadelta: per-parameter accumulators of squared gradients and squared
//! updates, both starting at zero.
//!
//! Update rule per element:
//!   Eg  <- rho Eg  + (1 - rho) g^2
//!   dx   = -sqrt(Edx + eps) / sqrt(Eg + eps) * g
//!   Edx <- rho Edx + (1 - rho) dx^2
//!   x   <- x + lr * dx

use crate::error::{NncError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdadeltaConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(NncError::config(format!("rho must be in (0,1), got {}", self.rho)));
        }
        if self.epsilon <= 0.0 {
            return Err(NncError::config("epsilon must be > 0"));
        }
        if !self.learning_rate.is_finite() {
            return Err(NncError::config("learning rate must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Accumulators {
    sq_grad: Vec<f64>,
    sq_update: Vec<f64>,
}

#[derive(Debug)]
pub struct Adadelta {
    config: AdadeltaConfig,
    state: Vec<Accumulators>,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig, param_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let state = param_sizes
            .iter()
            .map(|&n| Accumulators {
                sq_grad: vec![0.0; n],
                sq_update: vec![0.0; n],
            })
            .collect();
        Ok(Adadelta { config, state })
    }

    /// Apply one update; `params[i]` and `grads[i]` must share shapes with
    /// the sizes given at construction. A NaN gradient aborts with the
    /// offending parameter named.
    pub fn step(
        &mut self,
        params: &mut [(String, Tensor)],
        grads: &[Tensor],
    ) -> Result<()> {
        if params.len() != self.state.len() || grads.len() != self.state.len() {
            return Err(NncError::config("optimizer state count mismatch"));
        }
        let rho = self.config.rho;
        let eps = self.config.epsilon;
        let lr = self.config.learning_rate;
        for ((name, p), (g, acc)) in params
            .iter_mut()
            .zip(grads.iter().zip(self.state.iter_mut()))
        {
            if p.as_slice().len() != acc.sq_grad.len() || g.as_slice().len() != acc.sq_grad.len() {
                return Err(NncError::config(format!(
                    "parameter {name} shape does not match optimizer state"
                )));
            }
            for (i, (&gv, pv)) in g.as_slice().iter().zip(p.as_mut_slice()).enumerate() {
                if !gv.is_finite() {
                    return Err(NncError::numeric(format!(
                        "non-finite gradient for parameter {name} at element {i}"
                    )));
                }
                let eg = &mut acc.sq_grad[i];
                *eg = rho * *eg + (1.0 - rho) * gv * gv;
                let dx = -((acc.sq_update[i] + eps).sqrt() / (*eg + eps).sqrt()) * gv;
                acc.sq_update[i] = rho * acc.sq_update[i] + (1.0 - rho) * dx * dx;
                *pv += lr * dx;
                if !pv.is_finite() {
                    return Err(NncError::numeric(format!(
                        "parameter {name} became non-finite at element {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}
