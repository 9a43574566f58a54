use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates of the collapsing-bond walk on the d-dimensional lattice.
///
/// `lambda` is the rate of jump attempts, `p` the probability that a
/// traversed bond breaks, and `mu` the per-bond repair rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub p: f64,
    pub mu: f64,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(lambda: f64, p: f64, mu: f64, dim: usize) -> Result<Self> {
        let params = Self { lambda, p, mu, dim };
        params.validate()?;
        Ok(params)
    }

    /// One-dimensional walk.
    pub fn line(lambda: f64, p: f64, mu: f64) -> Result<Self> {
        Self::new(lambda, p, mu, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!(
                "lambda must be finite and > 0 (got {})",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParams(format!("p must lie in [0, 1] (got {})", self.p)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParams(format!(
                "mu must be finite and > 0 (got {})",
                self.mu
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParams("dim must be >= 1 (got 0)".into()));
        }
        Ok(())
    }

    /// Same rates with bond breaking switched off: the free walk.
    pub fn baseline(&self) -> Self {
        Self { p: 0.0, ..*self }
    }

    /// Regeneration-based quantities only exist when bonds can break.
    pub fn require_breaks(&self) -> Result<()> {
        self.validate()?;
        if self.p == 0.0 {
            return Err(Error::InvalidParams(
                "p must be > 0: without breaks there are no regeneration cycles".into(),
            ));
        }
        Ok(())
    }

    /// Arrival rate `lambda * p` of the dominating infinite-server queue.
    pub fn break_rate(&self) -> f64 {
        self.lambda * self.p
    }

    /// Mean busy cycle of the dominating queue, `exp(lambda p / mu) / (lambda p)`.
    pub fn queue_cycle_mean(&self) -> f64 {
        busy_cycle_closed_form(self.break_rate(), self.mu)
    }
}

/// Expected length of an idle-plus-busy cycle of an M/M/inf queue.
pub fn busy_cycle_closed_form(arrival_rate: f64, service_rate: f64) -> f64 {
    (arrival_rate / service_rate).exp() / arrival_rate
}
