//! Synthetic objective suites with oracle access to exact and stochastic
//! gradients and analytically known constants.
//!
//! Two client families are provided: quadratics `½xᵀA_ix − b_iᵀx` whose
//! curvature, heterogeneity, and noise level are controlled exactly, and
//! multinomial logistic regression over partitioned labeled data. A suite
//! is the collection of all N client objectives plus whatever closed-form
//! constants are known about the average objective `f = (1/N)Σ f_i`.

pub mod logreg;
pub mod quadratic;
pub mod serialize;

pub use logreg::{
    dataset_accuracy, gen_blob_dataset, logreg_suite_from_partition, LabeledDataset, LogRegClient,
};
pub use quadratic::{gen_quadratic_suite, QuadraticClient, QuadraticSuiteSpec, SpectrumMode};
pub use serialize::{load_suite, save_suite};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::state::BatchSize;
use rand_chacha::ChaCha12Rng;

/// One client's local objective.
#[derive(Debug, Clone)]
pub enum ClientObjective {
    Quadratic(QuadraticClient),
    LogReg(LogRegClient),
}

impl ClientObjective {
    pub fn dim(&self) -> usize {
        match self {
            ClientObjective::Quadratic(c) => c.dim(),
            ClientObjective::LogReg(c) => c.dim(),
        }
    }

    pub fn loss(&self, x: &ModelParams) -> Result<f64> {
        x.check_dim(self.dim())?;
        Ok(match self {
            ClientObjective::Quadratic(c) => c.loss(x.as_slice()),
            ClientObjective::LogReg(c) => c.loss(x.as_slice()),
        })
    }

    /// Exact local gradient ∇f_i(x).
    pub fn grad(&self, x: &ModelParams) -> Result<ModelParams> {
        x.check_dim(self.dim())?;
        Ok(ModelParams::from_vec(match self {
            ClientObjective::Quadratic(c) => c.grad(x.as_slice()),
            ClientObjective::LogReg(c) => c.grad(x.as_slice()),
        }))
    }

    /// Unbiased stochastic gradient. Quadratics add i.i.d. Gaussian noise;
    /// logistic clients subsample rows without replacement.
    pub fn stoch_grad(
        &self,
        x: &ModelParams,
        batch: BatchSize,
        rng: &mut ChaCha12Rng,
    ) -> Result<ModelParams> {
        x.check_dim(self.dim())?;
        Ok(ModelParams::from_vec(match self {
            ClientObjective::Quadratic(c) => c.stoch_grad(x.as_slice(), rng),
            ClientObjective::LogReg(c) => c.stoch_grad(x.as_slice(), batch, rng)?,
        }))
    }
}

/// Closed-form facts about a suite, when available. Generated quadratic
/// suites populate everything (with `x_star`/`f_star` absent when the mean
/// curvature is singular); logistic suites know only their convexity
/// constants.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnownConstants {
    /// Strong-convexity modulus of every client (0 = merely convex).
    pub mu: f64,
    /// Smoothness constant valid for every client.
    pub l: f64,
    /// Minimizer of the average objective: solves (mean A_i) x = mean b_i.
    pub x_star: Option<ModelParams>,
    /// f(x_star).
    pub f_star: Option<f64>,
    /// Exact heterogeneity level: √((1/N)Σ‖∇f_i(x) − ∇f(x)‖²), constant in x
    /// for shared-curvature quadratics.
    pub sigma_g: Option<f64>,
    /// Exact stochastic-gradient noise scale √E‖g − ∇f_i‖².
    pub sigma_l: Option<f64>,
}

/// A federated problem: N same-kind clients over a common parameter space.
#[derive(Debug, Clone)]
pub struct ProblemSuite {
    clients: Vec<ClientObjective>,
    dim: usize,
    pub known: Option<KnownConstants>,
    /// Held-out data for accuracy reporting (logistic suites only).
    pub test_set: Option<LabeledDataset>,
}

impl ProblemSuite {
    pub fn new(
        clients: Vec<ClientObjective>,
        known: Option<KnownConstants>,
        test_set: Option<LabeledDataset>,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("suite.n_clients", "suite needs at least one client"));
        }
        let dim = clients[0].dim();
        let same_kind = clients
            .windows(2)
            .all(|w| std::mem::discriminant(&w[0]) == std::mem::discriminant(&w[1]));
        if !same_kind {
            return Err(Error::config("suite.clients", "clients must all be the same kind"));
        }
        for c in &clients {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.dim() });
            }
        }
        Ok(ProblemSuite { clients, dim, known, test_set })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn client(&self, i: usize) -> &ClientObjective {
        &self.clients[i]
    }

    pub fn clients(&self) -> &[ClientObjective] {
        &self.clients
    }

    pub fn client_loss(&self, i: usize, x: &ModelParams) -> Result<f64> {
        self.clients[i].loss(x)
    }

    pub fn client_grad(&self, i: usize, x: &ModelParams) -> Result<ModelParams> {
        self.clients[i].grad(x)
    }

    pub fn client_stoch_grad(
        &self,
        i: usize,
        x: &ModelParams,
        batch: BatchSize,
        rng: &mut ChaCha12Rng,
    ) -> Result<ModelParams> {
        self.clients[i].stoch_grad(x, batch, rng)
    }

    /// f(x) = (1/N) Σ f_i(x), summed in client-id order.
    pub fn global_loss(&self, x: &ModelParams) -> Result<f64> {
        x.check_dim(self.dim)?;
        let mut acc = 0.0;
        for c in &self.clients {
            acc += c.loss(x)?;
        }
        Ok(acc / self.clients.len() as f64)
    }

    /// ∇f(x) = (1/N) Σ ∇f_i(x), summed in client-id order.
    pub fn global_grad(&self, x: &ModelParams) -> Result<ModelParams> {
        x.check_dim(self.dim)?;
        let mut acc = ModelParams::zeros(self.dim);
        for c in &self.clients {
            acc.add_scaled(1.0, &c.grad(x)?)?;
        }
        acc.scale(1.0 / self.clients.len() as f64);
        Ok(acc)
    }

    /// Gradient dissimilarity (1/N) Σ_i ‖∇f_i(x) − ∇f(x)‖² at one point.
    pub fn measure_heterogeneity(&self, x: &ModelParams) -> Result<f64> {
        let mean = self.global_grad(x)?;
        let mut acc = 0.0;
        for c in &self.clients {
            acc += c.grad(x)?.dist_sq(&mean)?;
        }
        Ok(acc / self.clients.len() as f64)
    }

    /// f(x) − f*, when the optimum is known.
    pub fn suboptimality(&self, x: &ModelParams) -> Result<Option<f64>> {
        match self.known.as_ref().and_then(|k| k.f_star) {
            Some(f_star) => Ok(Some(self.global_loss(x)? - f_star)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
pub(crate) fn two_client_line_suite() -> ProblemSuite {
    // f_1 = ½x² − x and f_2 = ½x² + x: gradients x∓1, so the dissimilarity
    // is exactly 1 at every x and the average objective ½x² bottoms at 0.
    let c1 = QuadraticClient::new(vec![1.0], vec![1.0], 0.0).unwrap();
    let c2 = QuadraticClient::new(vec![1.0], vec![-1.0], 0.0).unwrap();
    ProblemSuite::new(
        vec![ClientObjective::Quadratic(c1), ClientObjective::Quadratic(c2)],
        Some(KnownConstants {
            mu: 1.0,
            l: 1.0,
            x_star: Some(ModelParams::from_vec(vec![0.0])),
            f_star: Some(0.0),
            sigma_g: Some(1.0),
            sigma_l: Some(0.0),
        }),
        None,
    )
    .unwrap()
}
