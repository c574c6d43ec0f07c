//! Server-side state and the per-round hyperparameter block.

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Everything the server carries between rounds. Clients are stateless for
/// the momentum methods; the momentum buffer lives here and is shipped
/// downlink to participants each round.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub round: u64,
    pub params: ModelParams,
    /// Server momentum Δ_t (zero at round 0).
    pub momentum: ModelParams,
    /// Parameters of the previous round, kept for the shifted-sequence
    /// diagnostic. `None` only at round 0.
    pub prev_params: Option<ModelParams>,
}

impl ServerState {
    pub fn new(initial: ModelParams) -> Self {
        let dim = initial.dim();
        ServerState {
            round: 0,
            params: initial,
            momentum: ModelParams::zeros(dim),
            prev_params: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }
}

/// What one participating client returns to the server.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Displacement x_{i,K} - x_t over the local steps (not yet normalized).
    pub displacement: ModelParams,
    /// Stochastic gradients used at each local step, in step order. Only
    /// recorded when auditing is on; the aggregation identity check needs
    /// them, normal operation does not.
    pub step_grads: Option<Vec<ModelParams>>,
}

/// Minibatch size for local stochastic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BatchSize {
    /// Exact local gradient (plus synthetic noise where the suite adds any).
    Full,
    /// Subsample of this many points without replacement.
    Size(usize),
}

/// Hyperparameters shared by every round of a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundConfig {
    /// Base local step size η_l (decayed per round by `lr_decay`).
    pub local_lr: f64,
    /// Server step size η_g.
    pub global_lr: f64,
    /// Local steps K per round.
    pub local_steps: usize,
    /// Momentum mixing weight α in (0, 1]; α = 1 recovers plain FedAvg
    /// directions.
    pub alpha: f64,
    pub batch: BatchSize,
    /// Multiplicative per-round decay of the local step size; 1.0 = constant.
    pub lr_decay: f64,
    /// When set, the server applies η_g · η_l(t) · K instead of η_g, so that
    /// η_g = 1 reduces the server step to averaging the client models.
    pub scale_global_lr: bool,
    /// Optional l2 clipping threshold applied to each local stochastic
    /// gradient before it is used.
    pub grad_clip: Option<f64>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            local_lr: 0.1,
            global_lr: 1.0,
            local_steps: 1,
            alpha: 1.0,
            batch: BatchSize::Full,
            lr_decay: 1.0,
            scale_global_lr: false,
            grad_clip: None,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_lr > 0.0) || !self.local_lr.is_finite() {
            return Err(Error::config("round.local_lr", "must be finite and > 0"));
        }
        if !(self.global_lr > 0.0) || !self.global_lr.is_finite() {
            return Err(Error::config("round.global_lr", "must be finite and > 0"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("round.local_steps", "must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("round.alpha", "must lie in (0, 1]"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("round.lr_decay", "must lie in (0, 1]"));
        }
        if let BatchSize::Size(0) = self.batch {
            return Err(Error::config("round.batch", "batch size must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config("round.grad_clip", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Local step size actually used in round `t`.
    pub fn local_lr_at(&self, round: u64) -> f64 {
        if self.lr_decay == 1.0 {
            self.local_lr
        } else {
            self.local_lr * self.lr_decay.powf(round as f64)
        }
    }

    /// Server step size actually applied in round `t` (see
    /// `scale_global_lr`).
    pub fn effective_global_lr(&self, round: u64) -> f64 {
        if self.scale_global_lr {
            self.global_lr * self.local_lr_at(round) * self.local_steps as f64
        } else {
            self.global_lr
        }
    }
}
