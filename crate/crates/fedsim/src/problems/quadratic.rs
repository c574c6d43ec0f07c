//! Heterogeneous quadratic clients with exactly known constants.
//!
//! Client i minimizes f_i(x) = ½xᵀA_ix − b_iᵀx. The generator pins the
//! spectrum of every A_i to [μ, L] (endpoints attained), shifts the linear
//! terms b_i = b̄ + hetero·u_i with centered unit-mean-square offsets u_i,
//! and adds optional per-coordinate Gaussian gradient noise. This makes the
//! strong-convexity/smoothness constants, the heterogeneity level σ_g, the
//! noise level σ_l, and the global optimum all available in closed form.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::problems::{ClientObjective, KnownConstants, ProblemSuite};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct QuadraticClient {
    dim: usize,
    /// Row-major symmetric d×d matrix.
    a: Vec<f64>,
    b: Vec<f64>,
    noise_std: f64,
}

impl QuadraticClient {
    pub fn new(a: Vec<f64>, b: Vec<f64>, noise_std: f64) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::config("quadratic.b", "dimension must be >= 1"));
        }
        if a.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: a.len() });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if a[i * dim + j] != a[j * dim + i] {
                    return Err(Error::config(
                        "quadratic.a",
                        format!("matrix not symmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::config("quadratic.noise_std", "must be finite and >= 0"));
        }
        Ok(QuadraticClient { dim, a, b, noise_std })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let row = &self.a[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    /// ½xᵀAx − bᵀx.
    pub fn loss(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..self.dim {
            quad += x[i] * ax[i];
            lin += self.b[i] * x[i];
        }
        0.5 * quad - lin
    }

    /// Ax − b.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.matvec(x);
        for i in 0..self.dim {
            g[i] -= self.b[i];
        }
        g
    }

    /// Exact gradient plus i.i.d. N(0, noise_std²) per coordinate. The noise
    /// is drawn even when noise_std is 0 would be wasteful, so it is skipped
    /// entirely in that case and the result equals `grad` bitwise.
    pub fn stoch_grad(&self, x: &[f64], rng: &mut ChaCha12Rng) -> Vec<f64> {
        let mut g = self.grad(x);
        if self.noise_std > 0.0 {
            for gi in &mut g {
                let z: f64 = StandardNormal.sample(rng);
                *gi += self.noise_std * z;
            }
        }
        g
    }
}

/// Whether all clients share one curvature matrix or draw their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpectrumMode {
    /// One A for everyone: heterogeneity lives purely in the b_i, so σ_g is
    /// exactly the configured level at every x.
    Shared,
    /// Independent A_i (spectra still pinned to [μ, L]); σ_g becomes
    /// x-dependent and is no longer reported as exact.
    PerClient,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadraticSuiteSpec {
    pub n_clients: usize,
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    /// Target σ_g: scale of the centered offsets added to the b_i.
    pub hetero: f64,
    /// σ_l per-coordinate standard deviation of additive gradient noise.
    pub noise_std: f64,
    pub spectrum: SpectrumMode,
}

impl QuadraticSuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("suite.n_clients", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("suite.dim", "must be >= 1"));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::config("suite.mu", "must be finite and >= 0"));
        }
        if !self.l.is_finite() || self.mu > self.l {
            return Err(Error::config("suite.l", "need 0 <= mu <= L with L finite"));
        }
        if !(self.hetero >= 0.0) || !self.hetero.is_finite() {
            return Err(Error::config("suite.hetero", "must be finite and >= 0"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config("suite.noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Random orthogonal matrix from the QR factorization of a Gaussian draw.
fn random_orthogonal(dim: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    m.qr().q()
}

/// Spectrum with both endpoints attained: eig[0] = μ, eig[d−1] = L, interior
/// uniform in [μ, L]. A 1-dimensional client just gets L.
fn pinned_spectrum(spec: &QuadraticSuiteSpec, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let d = spec.dim;
    if d == 1 {
        return vec![spec.l];
    }
    let mut eig = Vec::with_capacity(d);
    eig.push(spec.mu);
    for _ in 0..d.saturating_sub(2) {
        let u: f64 = rand::Rng::random(rng);
        eig.push(spec.mu + u * (spec.l - spec.mu));
    }
    eig.push(spec.l);
    eig
}

fn assemble(q: &DMatrix<f64>, eig: &[f64]) -> Vec<f64> {
    let d = eig.len();
    let lambda = DMatrix::from_diagonal(&DVector::from_row_slice(eig));
    let m = q * lambda * q.transpose();
    // Symmetrize exactly; Q·Λ·Qᵀ is symmetric only up to rounding.
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        a[i * d + i] = m[(i, i)];
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    a
}

/// Generate a quadratic suite with analytically controlled constants.
///
/// Draw order (fixed, so suites are reproducible from one seed): curvature
/// matrices, then b̄, then the heterogeneity offsets u_i. The offsets are
/// centered (Σu_i = 0) and normalized to unit mean square, so with a shared
/// curvature matrix the measured dissimilarity equals `hetero²` exactly at
/// every x.
pub fn gen_quadratic_suite(
    spec: &QuadraticSuiteSpec,
    rng: &mut ChaCha12Rng,
) -> Result<ProblemSuite> {
    spec.validate()?;
    let n = spec.n_clients;
    let d = spec.dim;

    let a_mats: Vec<Vec<f64>> = match spec.spectrum {
        SpectrumMode::Shared => {
            let q = random_orthogonal(d, rng);
            let eig = pinned_spectrum(spec, rng);
            vec![assemble(&q, &eig); n]
        }
        SpectrumMode::PerClient => (0..n)
            .map(|_| {
                let q = random_orthogonal(d, rng);
                let eig = pinned_spectrum(spec, rng);
                assemble(&q, &eig)
            })
            .collect(),
    };

    let b_bar: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();

    // Centered, unit-mean-square offsets.
    let mut offsets: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..d {
        let mean = offsets.iter().map(|u| u[j]).sum::<f64>() / n as f64;
        for u in &mut offsets {
            u[j] -= mean;
        }
    }
    let mean_sq = offsets.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64;
    let effective_sigma_g = if mean_sq > 0.0 {
        let s = 1.0 / mean_sq.sqrt();
        for u in &mut offsets {
            for v in u.iter_mut() {
                *v *= s;
            }
        }
        spec.hetero
    } else {
        // Degenerate (N = 1): no offsets exist, so the suite is homogeneous
        // no matter what was requested.
        0.0
    };

    let clients: Vec<ClientObjective> = (0..n)
        .map(|i| {
            let b: Vec<f64> = (0..d).map(|j| b_bar[j] + spec.hetero * offsets[i][j]).collect();
            QuadraticClient::new(a_mats[i].clone(), b, spec.noise_std)
                .map(ClientObjective::Quadratic)
        })
        .collect::<Result<_>>()?;

    // Mean curvature and mean linear term, accumulated in client-id order to
    // match how global_grad will see them.
    let mut a_mean = DMatrix::zeros(d, d);
    let mut b_mean = DVector::zeros(d);
    for c in &clients {
        let ClientObjective::Quadratic(qc) = c else { unreachable!() };
        for i in 0..d {
            b_mean[i] += qc.b()[i];
            for j in 0..d {
                a_mean[(i, j)] += qc.a()[i * d + j];
            }
        }
    }
    a_mean /= n as f64;
    b_mean /= n as f64;

    // x* solves (mean A) x = mean b. One step of iterative refinement keeps
    // the optimality residual at rounding level even for stiff spectra; a
    // singular mean curvature (μ = 0) simply leaves the optimum unknown.
    let (x_star, f_star) = match a_mean.clone().cholesky() {
        Some(chol) => {
            let mut x = chol.solve(&b_mean);
            let r = &b_mean - &a_mean * &x;
            x += chol.solve(&r);
            let x_star = ModelParams::from_vec(x.iter().copied().collect());
            (Some(x_star), None)
        }
        None => (None, None),
    };

    let known = KnownConstants {
        mu: spec.mu,
        l: spec.l,
        x_star,
        f_star,
        sigma_g: match spec.spectrum {
            SpectrumMode::Shared => Some(effective_sigma_g),
            SpectrumMode::PerClient => None,
        },
        sigma_l: Some(spec.noise_std * (d as f64).sqrt()),
    };

    let mut suite = ProblemSuite::new(clients, Some(known), None)?;
    let x_star = suite.known.as_ref().unwrap().x_star.clone();
    if let Some(xs) = x_star {
        let f_star = suite.global_loss(&xs)?;
        suite.known.as_mut().unwrap().f_star = Some(f_star);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRoot;

    fn test_rng(seed: u64) -> ChaCha12Rng {
        StreamRoot(seed).suite_gen()
    }

    fn spec(n: usize, d: usize) -> QuadraticSuiteSpec {
        QuadraticSuiteSpec {
            n_clients: n,
            dim: d,
            mu: 0.1,
            l: 1.0,
            hetero: 1.0,
            noise_std: 0.0,
            spectrum: SpectrumMode::Shared,
        }
    }

    #[test]
    fn identity_quadratic_gradient_is_x() {
        let c = QuadraticClient::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(c.grad(&[3.0, -1.0]), vec![3.0, -1.0]);
    }

    #[test]
    fn line_quadratic_hand_values() {
        // f(x) = ½x² − x: f(0) = 0, ∇f(0) = −1.
        let c = QuadraticClient::new(vec![1.0], vec![1.0], 0.0).unwrap();
        assert_eq!(c.loss(&[0.0]), 0.0);
        assert_eq!(c.grad(&[0.0]), vec![-1.0]);
    }

    #[test]
    fn zero_noise_stoch_grad_is_exact_bitwise() {
        let c = QuadraticClient::new(vec![2.0], vec![0.5], 0.0).unwrap();
        let mut rng = test_rng(0);
        assert_eq!(c.stoch_grad(&[1.25], &mut rng), c.grad(&[1.25]));
    }

    #[test]
    fn noise_has_requested_scale() {
        // 10,000 draws at fixed x: per-coordinate sample std must land in
        // [0.09, 0.11] for noise_std = 0.1.
        let c = QuadraticClient::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.1).unwrap();
        let mut rng = test_rng(7);
        let x = [0.3, -0.2];
        let exact = c.grad(&x);
        let n = 10_000;
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for _ in 0..n {
            let g = c.stoch_grad(&x, &mut rng);
            for j in 0..2 {
                let e = g[j] - exact[j];
                sum[j] += e;
                sum_sq[j] += e * e;
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let var = sum_sq[j] / n as f64 - mean * mean;
            let std = var.sqrt();
            assert!((0.09..=0.11).contains(&std), "std[{j}] = {std}");
        }
    }

    #[test]
    fn generator_rejects_bad_constants() {
        let mut rng = test_rng(1);
        let bad = QuadraticSuiteSpec { mu: 2.0, l: 1.0, ..spec(4, 3) };
        assert!(gen_quadratic_suite(&bad, &mut rng).is_err());
        let bad = QuadraticSuiteSpec { hetero: -1.0, ..spec(4, 3) };
        assert!(gen_quadratic_suite(&bad, &mut rng).is_err());
    }

    #[test]
    fn spectrum_is_pinned_to_mu_l() {
        let mut rng = test_rng(2);
        let suite = gen_quadratic_suite(&spec(5, 6), &mut rng).unwrap();
        for c in suite.clients() {
            let ClientObjective::Quadratic(qc) = c else { unreachable!() };
            let m = DMatrix::from_row_slice(6, 6, qc.a());
            let eig = m.symmetric_eigen().eigenvalues;
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((min - 0.1).abs() < 1e-9, "min eigenvalue {min}");
            assert!((max - 1.0).abs() < 1e-9, "max eigenvalue {max}");
        }
    }

    #[test]
    fn mu_equals_l_forces_scaled_identity() {
        let mut rng = test_rng(3);
        let s = QuadraticSuiteSpec { mu: 1.0, l: 1.0, ..spec(3, 4) };
        let suite = gen_quadratic_suite(&s, &mut rng).unwrap();
        let ClientObjective::Quadratic(qc) = suite.client(0) else { unreachable!() };
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qc.a()[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_mode_heterogeneity_is_exact_at_any_point() {
        let mut rng = test_rng(4);
        let suite = gen_quadratic_suite(&spec(8, 5), &mut rng).unwrap();
        let sigma_g = suite.known.as_ref().unwrap().sigma_g.unwrap();
        assert_eq!(sigma_g, 1.0);
        for pt in [vec![0.0; 5], vec![1.0, -2.0, 0.5, 3.0, -0.25]] {
            let h = suite.measure_heterogeneity(&ModelParams::from_vec(pt)).unwrap();
            assert!((h - sigma_g * sigma_g).abs() < 1e-10, "h = {h}");
        }
    }

    #[test]
    fn hetero_zero_shared_curvature_means_identical_gradients() {
        let mut rng = test_rng(5);
        let s = QuadraticSuiteSpec { hetero: 0.0, ..spec(6, 3) };
        let suite = gen_quadratic_suite(&s, &mut rng).unwrap();
        let x = ModelParams::from_vec(vec![0.4, -1.0, 2.0]);
        // The client gradients are bitwise identical; the only deviation from
        // an exact zero is the rounding of their sequential average, which is
        // bounded by (an ulp of the gradient)² per coordinate.
        let h = suite.measure_heterogeneity(&x).unwrap();
        assert!(h <= 1e-28, "h = {h:e}");
        assert_eq!(suite.known.as_ref().unwrap().sigma_g, Some(0.0));
    }

    #[test]
    fn optimum_satisfies_first_order_condition() {
        for seed in 0..5 {
            let mut rng = test_rng(100 + seed);
            let s = QuadraticSuiteSpec { spectrum: SpectrumMode::PerClient, ..spec(7, 4) };
            let suite = gen_quadratic_suite(&s, &mut rng).unwrap();
            let known = suite.known.as_ref().unwrap();
            let xs = known.x_star.as_ref().unwrap();
            let g = suite.global_grad(xs).unwrap();
            assert!(g.l2_norm() <= 1e-10, "‖∇f(x*)‖ = {}", g.l2_norm());
            // f* is a true lower bound locally: nudge in a few directions.
            let f_star = known.f_star.unwrap();
            for j in 0..4 {
                let mut v = xs.clone().into_vec();
                v[j] += 1e-3;
                let f = suite.global_loss(&ModelParams::from_vec(v)).unwrap();
                assert!(f >= f_star);
            }
        }
    }

    #[test]
    fn single_client_suite_is_homogeneous_regardless_of_hetero() {
        let mut rng = test_rng(6);
        let suite = gen_quadratic_suite(&spec(1, 3), &mut rng).unwrap();
        assert_eq!(suite.known.as_ref().unwrap().sigma_g, Some(0.0));
        let x = ModelParams::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(suite.measure_heterogeneity(&x).unwrap(), 0.0);
    }

    #[test]
    fn generation_is_reproducible_from_the_seed() {
        let a = gen_quadratic_suite(&spec(4, 3), &mut test_rng(9)).unwrap();
        let b = gen_quadratic_suite(&spec(4, 3), &mut test_rng(9)).unwrap();
        for (ca, cb) in a.clients().iter().zip(b.clients()) {
            let (ClientObjective::Quadratic(ca), ClientObjective::Quadratic(cb)) = (ca, cb) else {
                unreachable!()
            };
            assert_eq!(ca.a(), cb.a());
            assert_eq!(ca.b(), cb.b());
        }
    }
}
