//! Multinomial logistic regression clients over partitioned labeled data.
//!
//! The model is a linear softmax classifier with flattened parameters: the
//! score of class c is Σ_j x[c·F + j]·φ_j for F features. The local loss is
//! mean cross-entropy plus (l2/2)‖x‖², which is convex and l2-strongly
//! convex when l2 > 0.

use crate::error::{Error, Result};
use crate::partition::Assignment;
use crate::problems::{ClientObjective, KnownConstants, ProblemSuite};
use crate::state::BatchSize;
use nalgebra::DMatrix;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabeledDataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// len() × n_features, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_classes < 2 {
            return Err(Error::config(
                "dataset",
                "need at least one feature and two classes",
            ));
        }
        if self.features.len() != self.labels.len() * self.n_features {
            return Err(Error::config(
                "dataset",
                format!(
                    "feature matrix has {} entries, want {} rows × {} features",
                    self.features.len(),
                    self.labels.len(),
                    self.n_features
                ),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::config(
                "dataset",
                format!("label {bad} out of range for {} classes", self.n_classes),
            ));
        }
        Ok(())
    }

    /// Rows selected by `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            features,
            labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogRegClient {
    data: LabeledDataset,
    l2_reg: f64,
}

/// Stable per-sample softmax distribution and log partition function.
fn softmax_stats(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= z;
    }
    (exps, m + z.ln())
}

impl LogRegClient {
    pub fn new(data: LabeledDataset, l2_reg: f64) -> Result<Self> {
        data.validate()?;
        if data.is_empty() {
            return Err(Error::config("dataset", "client dataset is empty"));
        }
        if !(l2_reg >= 0.0) || !l2_reg.is_finite() {
            return Err(Error::config("suite.l2_reg", "must be finite and >= 0"));
        }
        Ok(LogRegClient { data, l2_reg })
    }

    pub fn dim(&self) -> usize {
        self.data.n_classes * self.data.n_features
    }

    pub fn n_samples(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    fn logits(&self, x: &[f64], row: &[f64]) -> Vec<f64> {
        let f = self.data.n_features;
        (0..self.data.n_classes)
            .map(|c| {
                let w = &x[c * f..(c + 1) * f];
                w.iter().zip(row).map(|(wi, ri)| wi * ri).sum()
            })
            .collect()
    }

    /// Mean cross-entropy over the listed rows plus the full l2 term.
    fn loss_over(&self, x: &[f64], rows: &[usize]) -> f64 {
        let mut ce = 0.0;
        for &i in rows {
            let logits = self.logits(x, self.data.row(i));
            let (_, lse) = softmax_stats(&logits);
            ce += lse - logits[self.data.labels[i]];
        }
        ce /= rows.len() as f64;
        let reg: f64 = x.iter().map(|v| v * v).sum::<f64>();
        ce + 0.5 * self.l2_reg * reg
    }

    fn grad_over(&self, x: &[f64], rows: &[usize]) -> Vec<f64> {
        let f = self.data.n_features;
        let mut g = vec![0.0; self.dim()];
        for &i in rows {
            let row = self.data.row(i);
            let logits = self.logits(x, row);
            let (probs, _) = softmax_stats(&logits);
            for (c, &p) in probs.iter().enumerate() {
                let coeff = p - if c == self.data.labels[i] { 1.0 } else { 0.0 };
                let gc = &mut g[c * f..(c + 1) * f];
                for (gj, rj) in gc.iter_mut().zip(row) {
                    *gj += coeff * rj;
                }
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj = *gj * inv + self.l2_reg * xj;
        }
        g
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        let rows: Vec<usize> = (0..self.data.len()).collect();
        self.loss_over(x, &rows)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.data.len()).collect();
        self.grad_over(x, &rows)
    }

    /// Minibatch gradient over a uniform sample of rows without replacement;
    /// batch sizes at or above the dataset size fall back to the exact
    /// gradient. The l2 term is always exact, so the estimator stays
    /// unbiased for the full local objective.
    pub fn stoch_grad(
        &self,
        x: &[f64],
        batch: BatchSize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<f64>> {
        let n = self.data.len();
        let m = match batch {
            BatchSize::Full => n,
            BatchSize::Size(m) => m.min(n),
        };
        if m == 0 {
            return Err(Error::config("round.batch", "batch size must be >= 1"));
        }
        if m == n {
            return Ok(self.grad(x));
        }
        let mut rows = rand::seq::index::sample(rng, n, m).into_vec();
        rows.sort_unstable();
        Ok(self.grad_over(x, &rows))
    }

    /// Fraction of `data` classified correctly (ties go to the lower class).
    pub fn accuracy_on(&self, x: &[f64], data: &LabeledDataset) -> f64 {
        dataset_accuracy(x, data)
    }
}

/// Classification accuracy of flattened softmax weights on a dataset,
/// independent of any client.
pub fn dataset_accuracy(x: &[f64], data: &LabeledDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let f = data.n_features;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let row = data.row(i);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..data.n_classes {
            let w = &x[c * f..(c + 1) * f];
            let score: f64 = w.iter().zip(row).map(|(wi, ri)| wi * ri).sum();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        if best == data.labels[i] {
            hits += 1;
        }
    }
    hits as f64 / data.len() as f64
}

/// Gaussian blobs: class c gets mean m_c ~ class_sep·N(0, I), samples are
/// m_label + N(0, I). Labels cycle 0, 1, ..., C−1, so class counts differ by
/// at most one.
pub fn gen_blob_dataset(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    class_sep: f64,
    rng: &mut ChaCha12Rng,
) -> Result<LabeledDataset> {
    if n_samples == 0 || n_features == 0 || n_classes < 2 {
        return Err(Error::config(
            "dataset",
            "need n_samples >= 1, n_features >= 1, n_classes >= 2",
        ));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(Error::config("suite.class_sep", "must be finite and >= 0"));
    }
    let means: Vec<f64> = (0..n_classes * n_features)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            class_sep * z
        })
        .collect();
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % n_classes;
        labels.push(label);
        let mean = &means[label * n_features..(label + 1) * n_features];
        for &mj in mean {
            let z: f64 = StandardNormal.sample(rng);
            features.push(mj + z);
        }
    }
    Ok(LabeledDataset { n_features, n_classes, features, labels })
}

/// Build a federated logistic-regression suite from a labeled corpus and a
/// client assignment. Per-client smoothness is bounded by
/// ½·λ_max(ΦᵀΦ/n_i) + l2 (softmax Hessian factor ≤ ½), and the suite-level
/// L is the worst client's bound.
pub fn logreg_suite_from_partition(
    data: &LabeledDataset,
    assignment: &Assignment,
    l2_reg: f64,
    test_set: Option<LabeledDataset>,
) -> Result<ProblemSuite> {
    data.validate()?;
    if let Some(ref t) = test_set {
        t.validate()?;
        if t.n_features != data.n_features || t.n_classes != data.n_classes {
            return Err(Error::config(
                "suite.test",
                "test split shape differs from training corpus",
            ));
        }
    }
    let mut clients = Vec::with_capacity(assignment.n_clients());
    let mut l_max: f64 = 0.0;
    for rows in assignment.per_client() {
        if rows.is_empty() {
            return Err(Error::config(
                "suite",
                "a client received no samples; reduce n_clients or enlarge the corpus",
            ));
        }
        let local = data.subset(rows);
        let n_i = local.len();
        let gram = {
            let phi = DMatrix::from_row_slice(n_i, local.n_features, &local.features);
            (phi.transpose() * &phi) / n_i as f64
        };
        let lam_max = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0_f64, f64::max);
        l_max = l_max.max(0.5 * lam_max + l2_reg);
        clients.push(ClientObjective::LogReg(LogRegClient::new(local, l2_reg)?));
    }
    let known = KnownConstants {
        mu: l2_reg,
        l: l_max,
        x_star: None,
        f_star: None,
        sigma_g: None,
        sigma_l: None,
    };
    ProblemSuite::new(clients, Some(known), test_set)
}
