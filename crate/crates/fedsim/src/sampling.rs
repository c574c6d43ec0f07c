//! Per-round participant selection.

use crate::error::{Error, Result};
use crate::rng::StreamRoot;
use rand::Rng;

/// How the active client set of a round is drawn.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ParticipationScheme {
    /// A uniform random subset of exactly `s` distinct clients.
    FixedUniform { s: usize },
    /// Each client participates independently with probability `p`. An empty
    /// draw is rejected and redrawn from the same stream, so the round index
    /// still advances by exactly one per round.
    Bernoulli { p: f64 },
}

impl ParticipationScheme {
    /// Full participation expressed as a fixed subset of size `n`.
    pub fn full(n_clients: usize) -> Self {
        ParticipationScheme::FixedUniform { s: n_clients }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if n_clients == 0 {
            return Err(Error::config("participation", "no clients to sample from"));
        }
        match *self {
            ParticipationScheme::FixedUniform { s } => {
                if s == 0 || s > n_clients {
                    return Err(Error::config(
                        "participation.s",
                        format!("subset size {s} must be in 1..={n_clients}"),
                    ));
                }
            }
            ParticipationScheme::Bernoulli { p } => {
                if !(p > 0.0 && p <= 1.0) || !p.is_finite() {
                    return Err(Error::config(
                        "participation.p",
                        format!("probability {p} must be in (0, 1]"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Expected number of active clients per round (exact for both schemes,
    /// ignoring the empty-redraw correction which is negligible for Np >> 1).
    pub fn expected_active(&self, n_clients: usize) -> f64 {
        match *self {
            ParticipationScheme::FixedUniform { s } => s as f64,
            ParticipationScheme::Bernoulli { p } => p * n_clients as f64,
        }
    }
}

/// Draw the active set for `round`. Ids are returned sorted ascending and
/// are always non-empty; the draw depends only on (root, round, scheme).
pub fn sample_participants(
    scheme: &ParticipationScheme,
    n_clients: usize,
    round: u64,
    root: StreamRoot,
) -> Result<Vec<usize>> {
    scheme.validate(n_clients)?;
    let mut rng = root.sampling(round);
    match *scheme {
        ParticipationScheme::FixedUniform { s } => {
            let mut ids = rand::seq::index::sample(&mut rng, n_clients, s).into_vec();
            ids.sort_unstable();
            Ok(ids)
        }
        ParticipationScheme::Bernoulli { p } => loop {
            let ids: Vec<usize> = (0..n_clients).filter(|_| rng.random_bool(p)).collect();
            if !ids.is_empty() {
                return Ok(ids);
            }
        },
    }
}
