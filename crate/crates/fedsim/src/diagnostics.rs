//! Runtime verification of the momentum-aggregation identity and the
//! shifted-sequence update, drift measurement, averaged iterates, and
//! convergence-rate constants.
//!
//! The central identity: the aggregated pseudo-gradient is an exponential
//! moving average of client gradients, Δ_{t+1} = α·Δ̃_t + (1−α)·Δ_t with
//! Δ̃_t the plain average of all stochastic gradients used this round. The
//! shifted sequence z_t = x_t + ((1−α)/α)(x_t − x_{t−1}) then follows the
//! clean recursion z_{t+1} = z_t − η_g·Δ̃_t. Both are checked per round
//! from audit logs, independently of the engine's own arithmetic.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::problems::{ClientObjective, ProblemSuite};
use crate::sampling::ParticipationScheme;
use crate::state::{ClientUpdate, RoundConfig};

/// Per-round audit result for the EMA identity.
#[derive(Debug, Clone)]
pub struct MomentumAudit {
    pub round: u64,
    /// Δ̃_t: average of every logged stochastic gradient this round.
    pub delta_tilde: ModelParams,
    /// max-norm of Δ_{t+1} − α·Δ̃_t − (1−α)·Δ_t.
    pub ema_residual: f64,
}

/// Client-drift measurement ε_t for one round.
#[derive(Debug, Clone)]
pub struct DriftRecord {
    pub round: u64,
    /// (1/(K·M)) Σ_{i,k} ‖x_t − x_{i,k}‖² over the M measured clients.
    pub epsilon: f64,
    /// Per-step breakdown ε_k, averaged over clients only.
    pub per_step: Vec<f64>,
}

/// Δ̃_t = (1/(K·|S|)) Σ_{i∈S, k<K} g_{i,k}, summed in ascending client-id
/// order, step order within a client.
pub fn compute_delta_tilde(updates: &[ClientUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates);
    }
    let dim = updates[0].displacement.dim();
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);

    let k = updates[order[0]]
        .step_grads
        .as_ref()
        .ok_or(Error::MissingAuditLog { client: updates[order[0]].client_id })?
        .len();
    let mut sum = ModelParams::zeros(dim);
    for &i in &order {
        let u = &updates[i];
        let grads = u
            .step_grads
            .as_ref()
            .ok_or(Error::MissingAuditLog { client: u.client_id })?;
        if grads.len() != k {
            return Err(Error::MissingAuditLog { client: u.client_id });
        }
        for g in grads {
            sum.add_scaled(1.0, g)?;
        }
    }
    sum.scale(1.0 / (k as f64 * updates.len() as f64));
    Ok(sum)
}

/// max-norm of Δ_{t+1} − α·Δ̃_t − (1−α)·Δ_t.
pub fn check_ema_identity(
    delta_next: &ModelParams,
    delta_tilde: &ModelParams,
    delta_prev: &ModelParams,
    alpha: f64,
) -> Result<f64> {
    delta_tilde.check_dim(delta_next.dim())?;
    delta_prev.check_dim(delta_next.dim())?;
    let mut max = 0.0_f64;
    for j in 0..delta_next.dim() {
        let r = delta_next[j] - alpha * delta_tilde[j] - (1.0 - alpha) * delta_prev[j];
        max = max.max(r.abs());
    }
    Ok(max)
}

/// z_t = x_t + ((1−α)/α)(x_t − x_{t−1}); z_0 = x_0 by convention (Δ_0 = 0
/// makes the virtual x_{−1} equal x_0).
pub fn z_sequence(
    round: u64,
    x: &ModelParams,
    x_prev: Option<&ModelParams>,
    alpha: f64,
) -> Result<ModelParams> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("round.alpha", "must lie in (0, 1]"));
    }
    match x_prev {
        None if round == 0 => Ok(x.clone()),
        None => Err(Error::MissingPrev { round }),
        Some(prev) => {
            prev.check_dim(x.dim())?;
            let coeff = (1.0 - alpha) / alpha;
            let mut z = x.clone();
            let diff = x.sub(prev)?;
            z.add_scaled(coeff, &diff)?;
            Ok(z)
        }
    }
}

/// max-norm of z_{t+1} − z_t + η_g·Δ̃_t.
pub fn check_z_update(
    z_next: &ModelParams,
    z_curr: &ModelParams,
    eta_g: f64,
    delta_tilde: &ModelParams,
) -> Result<f64> {
    z_curr.check_dim(z_next.dim())?;
    delta_tilde.check_dim(z_next.dim())?;
    let mut max = 0.0_f64;
    for j in 0..z_next.dim() {
        let r = z_next[j] - z_curr[j] + eta_g * delta_tilde[j];
        max = max.max(r.abs());
    }
    Ok(max)
}

/// Convenience wrapper running the EMA identity check from raw audit data.
pub fn audit_momentum(
    round: u64,
    updates: &[ClientUpdate],
    delta_next: &ModelParams,
    delta_prev: &ModelParams,
    alpha: f64,
) -> Result<MomentumAudit> {
    let delta_tilde = compute_delta_tilde(updates)?;
    let ema_residual = check_ema_identity(delta_next, &delta_tilde, delta_prev, alpha)?;
    Ok(MomentumAudit { round, delta_tilde, ema_residual })
}

/// ε_t over recorded local trajectories: each trajectory holds the iterates
/// x_{i,0}, ..., x_{i,K−1} (the points where gradients were taken).
pub fn client_drift(
    round: u64,
    trajectories: &[(usize, Vec<ModelParams>)],
    x_t: &ModelParams,
    local_steps: usize,
) -> Result<DriftRecord> {
    if trajectories.is_empty() {
        return Err(Error::MissingTrajectory { client: 0 });
    }
    let m = trajectories.len() as f64;
    let mut per_step = vec![0.0; local_steps];
    for (client, traj) in trajectories {
        if traj.len() != local_steps {
            return Err(Error::MissingTrajectory { client: *client });
        }
        for (k, xik) in traj.iter().enumerate() {
            per_step[k] += x_t.dist_sq(xik)?;
        }
    }
    for v in &mut per_step {
        *v /= m;
    }
    let epsilon = per_step.iter().sum::<f64>() / local_steps as f64;
    Ok(DriftRecord { round, epsilon, per_step })
}

/// Σ w_t·z_t with geometric weights w_t ∝ (1−μη_g/2)^{−t−1}, normalized by
/// the largest weight before summing so nothing overflows.
pub fn weighted_average_iterate(
    z_list: &[ModelParams],
    mu: f64,
    eta_g: f64,
) -> Result<ModelParams> {
    if z_list.is_empty() {
        return Err(Error::DegenerateWeights { reason: "no iterates".into() });
    }
    let rho = 1.0 - mu * eta_g / 2.0;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::DegenerateWeights {
            reason: format!("need 0 < mu·eta_g/2 < 1, got {}", mu * eta_g / 2.0),
        });
    }
    let t_max = z_list.len();
    // w_t ∝ ρ^{−t−1}; dividing by the largest weight ρ^{−T} gives ρ^{T−1−t},
    // all in (0, 1], so the normalizer Σ is between 1 and T.
    let scaled: Vec<f64> = (0..t_max)
        .map(|t| rho.powf((t_max - 1 - t) as f64))
        .collect();
    let total: f64 = scaled.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::DegenerateWeights { reason: "weights summed to zero".into() });
    }
    let dim = z_list[0].dim();
    let mut out = ModelParams::zeros(dim);
    for (t, z) in z_list.iter().enumerate() {
        out.add_scaled(scaled[t] / total, z)?;
    }
    Ok(out)
}

/// The convergence-rate constants of the strongly convex analysis.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateConstants {
    pub c1: f64,
    pub c2: f64,
    /// ‖x_0 − x*‖².
    pub d_init: f64,
    /// f(x_0) − f*.
    pub f_init: f64,
    pub mu: f64,
    pub l: f64,
    /// max ‖∇f(x)‖ over the reporting ball ‖x − x*‖ ≤ box_radius.
    pub g: f64,
    pub sigma_l: f64,
    pub sigma_g: f64,
    pub k: usize,
    /// Expected active clients per round (exact for fixed-size sampling,
    /// p·N for Bernoulli).
    pub s: f64,
    pub n: usize,
    pub alpha: f64,
    pub box_radius: f64,
}

/// Evaluate C1 = σ_l² + K(1−S/N)σ_g² + K·S·G² and C2 = α(σ_l²/K + σ_g² + G²)
/// for a suite with closed-form constants. G is the exact maximum of ‖∇f‖
/// over the ball of radius `box_radius` around x* (default 2‖x_0 − x*‖),
/// which for quadratics is λ_max(mean A)·radius.
pub fn rate_constants(
    suite: &ProblemSuite,
    config: &RoundConfig,
    scheme: &ParticipationScheme,
    x_0: &ModelParams,
    box_radius: Option<f64>,
) -> Result<RateConstants> {
    let known = suite
        .known
        .as_ref()
        .ok_or(Error::UnknownConstants { what: "rate constants" })?;
    let (Some(x_star), Some(f_star), Some(sigma_g), Some(sigma_l)) =
        (&known.x_star, known.f_star, known.sigma_g, known.sigma_l)
    else {
        return Err(Error::UnknownConstants { what: "rate constants" });
    };
    x_0.check_dim(x_star.dim())?;

    let d_init = x_0.dist_sq(x_star)?;
    let f_init = suite.global_loss(x_0)? - f_star;
    let radius = box_radius.unwrap_or(2.0 * d_init.sqrt());

    // λ_max of the mean curvature matrix; quadratic suites only.
    let dim = suite.dim();
    let mut a_mean = nalgebra::DMatrix::zeros(dim, dim);
    for c in suite.clients() {
        let ClientObjective::Quadratic(qc) = c else {
            return Err(Error::UnknownConstants { what: "gradient bound G" });
        };
        for i in 0..dim {
            for j in 0..dim {
                a_mean[(i, j)] += qc.a()[i * dim + j];
            }
        }
    }
    a_mean /= suite.n_clients() as f64;
    let lam_max = a_mean
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    let g = lam_max * radius;

    let n = suite.n_clients();
    let s = scheme.expected_active(n);
    let k = config.local_steps;
    let kf = k as f64;
    let c1 = sigma_l * sigma_l
        + kf * (1.0 - s / n as f64) * sigma_g * sigma_g
        + kf * s * g * g;
    let c2 = config.alpha * (sigma_l * sigma_l / kf + sigma_g * sigma_g + g * g);

    Ok(RateConstants {
        c1,
        c2,
        d_init,
        f_init,
        mu: known.mu,
        l: known.l,
        g,
        sigma_l,
        sigma_g,
        k,
        s,
        n,
        alpha: config.alpha,
        box_radius: radius,
    })
}

/// The analysis' local step size η_l = min(min(η_g,1)/(8LK), 1/(8LSK²)).
pub fn analysis_local_lr(eta_g: f64, l: f64, k: usize, s: f64) -> f64 {
    let kf = k as f64;
    (eta_g.min(1.0) / (8.0 * l * kf)).min(1.0 / (8.0 * l * s * kf * kf))
}
