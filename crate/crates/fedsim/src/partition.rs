//! Label-based dataset partitioning: IID or Dirichlet label skew.
//!
//! Every client receives exactly `floor(total / n_clients)` samples;
//! leftovers are discarded. Under the Dirichlet scheme each client draws
//! class proportions q ~ Dir(concentration·1), which are rounded to integer
//! counts by the largest-remainder method and then filled from per-class
//! pools. Lower concentration means more label skew.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PartitionScheme {
    Iid,
    Dirichlet { concentration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub n_clients: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("partition.n_clients", "must be >= 1"));
        }
        if let PartitionScheme::Dirichlet { concentration } = self.scheme {
            if !(concentration > 0.0) || !concentration.is_finite() {
                return Err(Error::config(
                    "partition.concentration",
                    "must be finite and > 0",
                ));
            }
        }
        Ok(())
    }
}

/// A deficit that had to be re-routed because a class pool ran dry:
/// `count` samples requested from `short_class` were taken from
/// `filled_from` instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DeficitAdjustment {
    pub client: usize,
    pub short_class: usize,
    pub filled_from: usize,
    pub count: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Assignment {
    n_samples: usize,
    quota: usize,
    n_classes: usize,
    /// Sample indices per client, sorted ascending.
    per_client: Vec<Vec<usize>>,
    /// N × n_classes class histogram.
    per_client_class_counts: Vec<Vec<usize>>,
    /// Log of deficit re-routing events (empty when every Dirichlet draw
    /// could be honored from its own class pool).
    adjustments: Vec<DeficitAdjustment>,
}

impl Assignment {
    pub fn n_clients(&self) -> usize {
        self.per_client.len()
    }

    /// Samples per client (identical for every client by construction).
    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn per_client(&self) -> &[Vec<usize>] {
        &self.per_client
    }

    pub fn class_counts(&self) -> &[Vec<usize>] {
        &self.per_client_class_counts
    }

    pub fn adjustments(&self) -> &[DeficitAdjustment] {
        &self.adjustments
    }

    /// Client of each original sample index; discarded samples map to None.
    pub fn client_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_samples];
        for (client, rows) in self.per_client.iter().enumerate() {
            for &r in rows {
                out[r] = Some(client);
            }
        }
        out
    }

    /// Two-column plain-text export: `sample_index<TAB>client_id`, retained
    /// samples only, ordered by sample index.
    pub fn export_text(&self) -> String {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(self.per_client.len() * self.quota);
        for (client, rows) in self.per_client.iter().enumerate() {
            for &r in rows {
                pairs.push((r, client));
            }
        }
        pairs.sort_unstable();
        let mut out = String::with_capacity(pairs.len() * 8);
        for (sample, client) in pairs {
            out.push_str(&format!("{sample}\t{client}\n"));
        }
        out
    }
}

/// Largest-remainder rounding of `quota · proportions` to integers summing
/// exactly to `quota`. Ties in the remainders keep the lower class first.
fn largest_remainder_counts(proportions: &[f64], quota: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * quota as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    // sort by remainder descending, class id ascending on ties
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..quota.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Assign a labeled corpus to clients. Deterministic given (labels, spec,
/// rng stream): the stream is consumed as one shuffle per class pool (IID:
/// one global shuffle) followed by per-client Dirichlet draws in client-id
/// order.
pub fn partition(
    labels: &[usize],
    spec: &PartitionSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Assignment> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::BadPartitionInput("label list is empty".into()));
    }
    let n_clients = spec.n_clients;
    let quota = labels.len() / n_clients;
    if quota == 0 {
        return Err(Error::BadPartitionInput(format!(
            "{} samples cannot give {} clients at least one sample each",
            labels.len(),
            n_clients
        )));
    }
    let n_classes = labels.iter().copied().max().unwrap() + 1;

    let mut per_client: Vec<Vec<usize>> = vec![Vec::with_capacity(quota); n_clients];
    let mut adjustments = Vec::new();

    match spec.scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(rng);
            for (client, rows) in per_client.iter_mut().enumerate() {
                rows.extend_from_slice(&idx[client * quota..(client + 1) * quota]);
            }
        }
        PartitionScheme::Dirichlet { concentration } => {
            // Per-class pools, each shuffled once; a cursor walks each pool.
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &l) in labels.iter().enumerate() {
                pools[l].push(i);
            }
            for pool in &mut pools {
                pool.shuffle(rng);
            }
            let mut cursor = vec![0usize; n_classes];
            let gamma = Gamma::new(concentration, 1.0)
                .map_err(|e| Error::config("partition.concentration", e.to_string()))?;

            for (client, rows) in per_client.iter_mut().enumerate() {
                // q ~ Dir(concentration·1) via normalized Gamma draws.
                let mut q: Vec<f64> = (0..n_classes).map(|_| gamma.sample(rng)).collect();
                let total: f64 = q.iter().sum();
                if total > 0.0 {
                    for v in &mut q {
                        *v /= total;
                    }
                } else {
                    // All draws underflowed to zero (possible for extreme
                    // concentrations); fall back to uniform.
                    q.fill(1.0 / n_classes as f64);
                }
                let targets = largest_remainder_counts(&q, quota);

                // First pass: honor each class target while the pool lasts.
                let mut deficits: Vec<(usize, usize)> = Vec::new();
                for (class, &want) in targets.iter().enumerate() {
                    let available = pools[class].len() - cursor[class];
                    let take = want.min(available);
                    rows.extend_from_slice(&pools[class][cursor[class]..cursor[class] + take]);
                    cursor[class] += take;
                    if take < want {
                        deficits.push((class, want - take));
                    }
                }
                // Second pass: re-route deficits to the most-available class,
                // ties broken by lower class id.
                for (short_class, mut need) in deficits {
                    while need > 0 {
                        let donor = (0..n_classes)
                            .max_by_key(|&c| (pools[c].len() - cursor[c], std::cmp::Reverse(c)))
                            .unwrap();
                        let available = pools[donor].len() - cursor[donor];
                        if available == 0 {
                            // Cannot happen while total remaining >= quota
                            // per remaining client, but fail loudly if the
                            // bookkeeping is ever wrong.
                            return Err(Error::BadPartitionInput(
                                "all class pools exhausted before quotas were met".into(),
                            ));
                        }
                        let take = need.min(available);
                        rows.extend_from_slice(&pools[donor][cursor[donor]..cursor[donor] + take]);
                        cursor[donor] += take;
                        need -= take;
                        adjustments.push(DeficitAdjustment {
                            client,
                            short_class,
                            filled_from: donor,
                            count: take,
                        });
                    }
                }
            }
        }
    }

    let mut per_client_class_counts = vec![vec![0usize; n_classes]; n_clients];
    for (client, rows) in per_client.iter_mut().enumerate() {
        rows.sort_unstable();
        for &r in rows.iter() {
            per_client_class_counts[client][labels[r]] += 1;
        }
    }

    Ok(Assignment {
        n_samples: labels.len(),
        quota,
        n_classes,
        per_client,
        per_client_class_counts,
        adjustments,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PartitionStats {
    /// Class distribution over all retained samples.
    pub global_distribution: Vec<f64>,
    /// Mean over clients of the total-variation distance between the
    /// client's class distribution and the global one.
    pub mean_tv_distance: f64,
    pub per_client_class_counts: Vec<Vec<usize>>,
}

/// Heterogeneity report for an assignment. Fails if the assignment's
/// histograms disagree with the labels.
pub fn partition_stats(assignment: &Assignment, labels: &[usize]) -> Result<PartitionStats> {
    let n_classes = assignment.n_classes();
    let quota = assignment.quota();
    let mut recount = vec![vec![0usize; n_classes]; assignment.n_clients()];
    for (client, rows) in assignment.per_client().iter().enumerate() {
        for &r in rows {
            let label = *labels.get(r).ok_or_else(|| {
                Error::BadPartitionInput(format!("sample index {r} out of range"))
            })?;
            recount[client][label] += 1;
        }
    }
    if recount != assignment.class_counts() {
        return Err(Error::BadPartitionInput(
            "per-client class counts disagree with labels".into(),
        ));
    }

    let total = (assignment.n_clients() * quota) as f64;
    let mut global = vec![0.0; n_classes];
    for counts in assignment.class_counts() {
        for (c, &k) in counts.iter().enumerate() {
            global[c] += k as f64;
        }
    }
    for g in &mut global {
        *g /= total;
    }

    let mut tv_sum = 0.0;
    for counts in assignment.class_counts() {
        let mut tv = 0.0;
        for (c, &k) in counts.iter().enumerate() {
            tv += (k as f64 / quota as f64 - global[c]).abs();
        }
        tv_sum += 0.5 * tv;
    }

    Ok(PartitionStats {
        global_distribution: global,
        mean_tv_distance: tv_sum / assignment.n_clients() as f64,
        per_client_class_counts: assignment.class_counts().to_vec(),
    })
}
