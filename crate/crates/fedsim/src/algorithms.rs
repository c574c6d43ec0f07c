//! Client and server update rules: FedAvg, FedCM, FedAdam, SCAFFOLD.
//!
//! FedAvg runs K plain stochastic-gradient steps per client. FedCM replaces
//! the step direction by the blend v = α·g + (1−α)·Δ_t with the server
//! momentum Δ_t broadcast downlink-only — clients stay stateless. FedAdam
//! keeps FedAvg clients and applies an Adam-style rule to the aggregated
//! pseudo-gradient on the server. SCAFFOLD corrects each local step by
//! control variates and is the one deliberately stateful baseline.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::problems::ClientObjective;
use crate::state::{BatchSize, ClientUpdate};
use rand_chacha::ChaCha12Rng;

/// Server-side Adam moments (no bias correction; raw EMAs).
#[derive(Debug, Clone)]
pub struct FedAdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl FedAdamState {
    pub fn new(beta1: f64, beta2: f64, tau: f64, dim: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config("adam.beta", "beta1, beta2 must lie in [0, 1)"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::config("adam.tau", "must be finite and > 0"));
        }
        Ok(FedAdamState {
            beta1,
            beta2,
            tau,
            m: ModelParams::zeros(dim),
            v: ModelParams::zeros(dim),
        })
    }
}

/// SCAFFOLD's persistent control variates: the server's c and one c_i per
/// client, all zero-initialized.
#[derive(Debug, Clone)]
pub struct ScaffoldState {
    pub server_c: ModelParams,
    pub client_c: Vec<ModelParams>,
}

impl ScaffoldState {
    pub fn new(n_clients: usize, dim: usize) -> Self {
        ScaffoldState {
            server_c: ModelParams::zeros(dim),
            client_c: vec![ModelParams::zeros(dim); n_clients],
        }
    }
}

/// Which update rule a run uses, together with any server-owned state.
#[derive(Debug, Clone)]
pub enum Algorithm {
    FedAvg,
    FedCm,
    FedAdam(FedAdamState),
    Scaffold(ScaffoldState),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedCm => "fedcm",
            Algorithm::FedAdam(_) => "fedadam",
            Algorithm::Scaffold(_) => "scaffold",
        }
    }

    /// Whether the aggregated update is formed from momentum-blended
    /// directions (FedCM) rather than raw gradients.
    pub fn uses_momentum_blend(&self) -> bool {
        matches!(self, Algorithm::FedCm)
    }
}

/// Per-client knobs for one round, resolved by the engine: the step size is
/// already decayed, and `round` is carried for error reporting.
#[derive(Debug, Clone, Copy)]
pub struct LocalStepConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: BatchSize,
    pub grad_clip: Option<f64>,
    /// Record per-step gradients and iterates for the audit checks.
    pub audit: bool,
    pub round: u64,
}

/// One client's finished round: the update sent uplink, plus the local
/// iterates x_{i,0..K−1} when auditing (for drift measurement).
#[derive(Debug, Clone)]
pub struct LocalRun {
    pub update: ClientUpdate,
    pub trajectory: Option<Vec<ModelParams>>,
}

fn clip_in_place(g: &mut ModelParams, threshold: Option<f64>) {
    if let Some(t) = threshold {
        let norm = g.l2_norm();
        if norm > t {
            g.scale(t / norm);
        }
    }
}

fn check_finite(p: &ModelParams, round: u64) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::NonFinite { round });
    }
    Ok(())
}

/// K local steps in direction v = α·g + (1−α)·Δ_t. FedAvg is the α = 1
/// special case, where the blend collapses to 1·g + 0·Δ and is bitwise
/// identical to a plain gradient step.
fn momentum_local_steps(
    x_t: &ModelParams,
    momentum: &ModelParams,
    alpha: f64,
    client: &ClientObjective,
    client_id: usize,
    cfg: &LocalStepConfig,
    rng: &mut ChaCha12Rng,
) -> Result<LocalRun> {
    momentum.check_dim(x_t.dim())?;
    let mut x = x_t.clone();
    let mut grads = cfg.audit.then(|| Vec::with_capacity(cfg.steps));
    let mut traj = cfg.audit.then(|| Vec::with_capacity(cfg.steps));
    let one_minus = 1.0 - alpha;
    for _ in 0..cfg.steps {
        if let Some(t) = traj.as_mut() {
            t.push(x.clone());
        }
        let mut g = client.stoch_grad(&x, cfg.batch, rng)?;
        clip_in_place(&mut g, cfg.grad_clip);
        check_finite(&g, cfg.round)?;
        {
            let xs = x.as_mut_slice();
            let gs = g.as_slice();
            let ms = momentum.as_slice();
            for j in 0..xs.len() {
                let v = alpha * gs[j] + one_minus * ms[j];
                xs[j] -= cfg.lr * v;
            }
        }
        check_finite(&x, cfg.round)?;
        if let Some(gr) = grads.as_mut() {
            gr.push(g);
        }
    }
    let displacement = x.sub(x_t)?;
    Ok(LocalRun {
        update: ClientUpdate { client_id, displacement, step_grads: grads },
        trajectory: traj,
    })
}

/// Plain local SGD (Algorithm: K steps of x ← x − η_l·g).
pub fn client_update_fedavg(
    x_t: &ModelParams,
    client: &ClientObjective,
    client_id: usize,
    cfg: &LocalStepConfig,
    rng: &mut ChaCha12Rng,
) -> Result<LocalRun> {
    // α = 1 with a zero momentum buffer: same code path as FedCM so the
    // reduction equivalence is structural, not coincidental.
    let zero = ModelParams::zeros(x_t.dim());
    momentum_local_steps(x_t, &zero, 1.0, client, client_id, cfg, rng)
}

/// Client-level momentum: every local step follows α·g + (1−α)·Δ_t.
pub fn client_update_fedcm(
    x_t: &ModelParams,
    momentum: &ModelParams,
    alpha: f64,
    client: &ClientObjective,
    client_id: usize,
    cfg: &LocalStepConfig,
    rng: &mut ChaCha12Rng,
) -> Result<LocalRun> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("round.alpha", "must lie in (0, 1]"));
    }
    momentum_local_steps(x_t, momentum, alpha, client, client_id, cfg, rng)
}

/// SCAFFOLD local steps with direction g − c_i + c, plus the difference-based
/// variate refresh c_i' = c_i − c + (x_t − x_{i,K})/(K·η_l). Returns the new
/// c_i alongside the update; the engine owns writing it back and advancing
/// the server variate c ← c + (|S|/N)·mean(c_i' − c_i).
pub fn client_update_scaffold(
    x_t: &ModelParams,
    server_c: &ModelParams,
    client_c: &ModelParams,
    client: &ClientObjective,
    client_id: usize,
    cfg: &LocalStepConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(LocalRun, ModelParams)> {
    server_c.check_dim(x_t.dim())?;
    client_c.check_dim(x_t.dim())?;
    let mut x = x_t.clone();
    let mut traj = cfg.audit.then(|| Vec::with_capacity(cfg.steps));
    for _ in 0..cfg.steps {
        if let Some(t) = traj.as_mut() {
            t.push(x.clone());
        }
        let mut g = client.stoch_grad(&x, cfg.batch, rng)?;
        clip_in_place(&mut g, cfg.grad_clip);
        check_finite(&g, cfg.round)?;
        {
            let xs = x.as_mut_slice();
            let gs = g.as_slice();
            let ci = client_c.as_slice();
            let c = server_c.as_slice();
            for j in 0..xs.len() {
                xs[j] -= cfg.lr * (gs[j] - ci[j] + c[j]);
            }
        }
        check_finite(&x, cfg.round)?;
    }
    let displacement = x.sub(x_t)?;
    // c_i' = c_i − c + (x_t − x_K)/(K·η_l); note x_t − x_K = −displacement.
    let mut new_c = client_c.clone();
    new_c.add_scaled(-1.0, server_c)?;
    new_c.add_scaled(-1.0 / (cfg.steps as f64 * cfg.lr), &displacement)?;
    check_finite(&new_c, cfg.round)?;
    Ok((
        LocalRun {
            update: ClientUpdate { client_id, displacement, step_grads: None },
            trajectory: traj,
        },
        new_c,
    ))
}

/// Adam-style server rule over the aggregated pseudo-gradient. Updates the
/// moments in place and returns the step vector to subtract from x_t.
pub fn server_update_fedadam(
    state: &mut FedAdamState,
    delta_next: &ModelParams,
    global_lr: f64,
) -> Result<ModelParams> {
    delta_next.check_dim(state.m.dim())?;
    let ms = state.m.as_mut_slice();
    let vs = state.v.as_mut_slice();
    let ds = delta_next.as_slice();
    let mut step = vec![0.0; ds.len()];
    for j in 0..ds.len() {
        ms[j] = state.beta1 * ms[j] + (1.0 - state.beta1) * ds[j];
        vs[j] = state.beta2 * vs[j] + (1.0 - state.beta2) * ds[j] * ds[j];
        step[j] = global_lr * ms[j] / (vs[j].sqrt() + state.tau);
    }
    Ok(ModelParams::from_vec(step))
}
