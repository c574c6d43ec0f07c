//! Randomized invariant checks: aggregation algebra, sampling laws,
//! partition bookkeeping, curvature witnesses, and bitwise determinism.

use fedsim::algorithms::{client_update_fedavg, client_update_fedcm, LocalStepConfig};
use fedsim::config::{AlgorithmKind, ExperimentConfig, ParticipationKind, SuiteKind};
use fedsim::diagnostics::weighted_average_iterate;
use fedsim::engine::{aggregate_updates, server_step};
use fedsim::experiment::run_experiment;
use fedsim::partition::{partition, PartitionScheme, PartitionSpec};
use fedsim::problems::{
    gen_quadratic_suite, ProblemSuite, QuadraticSuiteSpec, SpectrumMode,
};
use fedsim::sampling::{sample_participants, ParticipationScheme};
use fedsim::state::{BatchSize, ClientUpdate, ServerState};
use fedsim::{ModelParams, StreamRoot};
use proptest::prelude::*;

fn quad_suite(seed: u64, n: usize, dim: usize, hetero: f64, noise: f64) -> ProblemSuite {
    let spec = QuadraticSuiteSpec {
        n_clients: n,
        dim,
        mu: 0.1,
        l: 1.0,
        hetero,
        noise_std: noise,
        spectrum: SpectrumMode::Shared,
    };
    gen_quadratic_suite(&spec, &mut StreamRoot(seed).suite_gen()).expect("valid spec")
}

fn updates_from(disp: &[Vec<f64>]) -> Vec<ClientUpdate> {
    disp.iter()
        .enumerate()
        .map(|(i, d)| ClientUpdate {
            client_id: i,
            displacement: ModelParams::from_vec(d.clone()),
            step_grads: None,
        })
        .collect()
}

proptest! {
    /// Scaling every displacement by c scales the aggregate by c, and the
    /// input order never matters (summation is id-sorted internally).
    #[test]
    fn aggregation_is_linear_and_order_invariant(
        disp in prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, 3), 1..6),
        c in -4.0f64..4.0,
        lr in 0.01f64..1.0,
        steps in 1usize..10,
    ) {
        let base = updates_from(&disp);
        let delta = aggregate_updates(&base, lr, steps).unwrap();

        let scaled_in: Vec<ClientUpdate> = base.iter().map(|u| {
            let mut d = u.displacement.clone();
            d.scale(c);
            ClientUpdate { client_id: u.client_id, displacement: d, step_grads: None }
        }).collect();
        let delta_scaled = aggregate_updates(&scaled_in, lr, steps).unwrap();
        for j in 0..delta.dim() {
            prop_assert!((delta_scaled[j] - c * delta[j]).abs() < 1e-12);
        }

        let mut reversed = base.clone();
        reversed.reverse();
        let delta_rev = aggregate_updates(&reversed, lr, steps).unwrap();
        prop_assert_eq!(delta.as_slice(), delta_rev.as_slice());
    }

    /// If every client moves exactly −η_l·K·g, the aggregate recovers g.
    #[test]
    fn aggregation_inverts_a_uniform_gradient_step(
        g in prop::collection::vec(-5.0f64..5.0, 1..5),
        lr in 0.01f64..1.0,
        steps in 1usize..10,
        n in 1usize..6,
    ) {
        let disp: Vec<Vec<f64>> = (0..n)
            .map(|_| g.iter().map(|v| -lr * steps as f64 * v).collect())
            .collect();
        let delta = aggregate_updates(&updates_from(&disp), lr, steps).unwrap();
        for j in 0..g.len() {
            prop_assert!((delta[j] - g[j]).abs() <= 1e-12 * (1.0 + g[j].abs()));
        }
    }

    /// The server stores the aggregate bitwise as its momentum, keeps the
    /// previous iterate, advances the round, and steps x ← x − η_g·Δ.
    #[test]
    fn server_step_stores_momentum_bitwise_and_advances_round(
        x in prop::collection::vec(-10.0f64..10.0, 1..6),
        d_raw in prop::collection::vec(-10.0f64..10.0, 6),
        lr in 0.0f64..2.0,
    ) {
        let dim = x.len();
        let delta = ModelParams::from_vec(d_raw[..dim].to_vec());
        let state = ServerState::new(ModelParams::from_vec(x.clone()));
        let next = server_step(&state, &delta, lr).unwrap();

        prop_assert_eq!(next.round, 1);
        prop_assert_eq!(next.momentum.as_slice(), delta.as_slice());
        prop_assert_eq!(
            next.prev_params.as_ref().unwrap().as_slice(),
            state.params.as_slice()
        );
        let mut expect = ModelParams::from_vec(x);
        expect.add_scaled(-lr, &delta).unwrap();
        prop_assert_eq!(next.params.as_slice(), expect.as_slice());
    }

    /// Participant draws are sorted, duplicate-free, in range, non-empty,
    /// and reproducible from (root, round).
    #[test]
    fn sampled_participants_are_sorted_unique_in_range_nonempty(
        seed in any::<u64>(),
        round in 0u64..1000,
        n in 1usize..40,
        s_frac in 0.01f64..1.0,
    ) {
        let s = ((n as f64 * s_frac).ceil() as usize).clamp(1, n);
        for scheme in [
            ParticipationScheme::FixedUniform { s },
            ParticipationScheme::Bernoulli { p: s_frac },
        ] {
            let ids = sample_participants(&scheme, n, round, StreamRoot(seed)).unwrap();
            prop_assert!(!ids.is_empty());
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "sorted, unique");
            prop_assert!(*ids.last().unwrap() < n);
            if let ParticipationScheme::FixedUniform { s } = scheme {
                prop_assert_eq!(ids.len(), s);
            }
            let again = sample_participants(&scheme, n, round, StreamRoot(seed)).unwrap();
            prop_assert_eq!(ids, again);
        }
    }

    /// Partitions hand every client exactly `quota` samples, never assign a
    /// sample twice, and are reproducible from the same stream.
    #[test]
    fn partition_is_exhaustive_balanced_and_deterministic(
        seed in any::<u64>(),
        n_samples in 30usize..200,
        n_classes in 1usize..5,
        n_clients in 2usize..8,
        conc in 0.05f64..10.0,
        dirichlet in any::<bool>(),
    ) {
        let labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
        let scheme = if dirichlet {
            PartitionScheme::Dirichlet { concentration: conc }
        } else {
            PartitionScheme::Iid
        };
        let spec = PartitionSpec { scheme, n_clients };
        let a = partition(&labels, &spec, &mut StreamRoot(seed).partition()).unwrap();
        let b = partition(&labels, &spec, &mut StreamRoot(seed).partition()).unwrap();
        prop_assert_eq!(a.per_client(), b.per_client());

        let quota = n_samples / n_clients;
        prop_assert_eq!(a.quota(), quota);
        let mut seen = vec![false; n_samples];
        for rows in a.per_client() {
            prop_assert_eq!(rows.len(), quota);
            for &r in rows {
                prop_assert!(r < n_samples);
                prop_assert!(!seen[r], "sample assigned twice");
                seen[r] = true;
            }
        }
        prop_assert_eq!(seen.iter().filter(|&&s| s).count(), quota * n_clients);
        for (client, counts) in a.class_counts().iter().enumerate() {
            let total: usize = counts.iter().sum();
            prop_assert_eq!(total, a.per_client()[client].len());
        }
    }

    /// Every generated objective is μ-strongly convex and L-smooth: check
    /// the first-order lower bound and the gradient Lipschitz bound at
    /// random point pairs, for each client and for the global average.
    #[test]
    fn generated_suites_satisfy_strong_convexity_and_smoothness(
        seed in any::<u64>(),
        xr in prop::collection::vec(-5.0f64..5.0, 3),
        yr in prop::collection::vec(-5.0f64..5.0, 3),
        hetero in 0.0f64..3.0,
    ) {
        let suite = quad_suite(seed, 4, 3, hetero, 0.0);
        let (mu, l) = {
            let k = suite.known.as_ref().unwrap();
            (k.mu, k.l)
        };
        let x = ModelParams::from_vec(xr);
        let y = ModelParams::from_vec(yr);
        let gap = x.dist_sq(&y).unwrap();

        let mut pairs: Vec<(f64, f64, ModelParams, ModelParams)> = Vec::new();
        for i in 0..suite.n_clients() {
            pairs.push((
                suite.client_loss(i, &x).unwrap(),
                suite.client_loss(i, &y).unwrap(),
                suite.client_grad(i, &x).unwrap(),
                suite.client_grad(i, &y).unwrap(),
            ));
        }
        pairs.push((
            suite.global_loss(&x).unwrap(),
            suite.global_loss(&y).unwrap(),
            suite.global_grad(&x).unwrap(),
            suite.global_grad(&y).unwrap(),
        ));

        for (fx, fy, gx, gy) in pairs {
            let slack = 1e-9 * (1.0 + fx.abs() + fy.abs());
            let mut inner = 0.0;
            for j in 0..x.dim() {
                inner += gx[j] * (y[j] - x[j]);
            }
            prop_assert!(
                fy >= fx + inner + 0.5 * mu * gap - slack,
                "strong convexity: f(y)={fy}, bound={}",
                fx + inner + 0.5 * mu * gap
            );
            let mut diff = gx.clone();
            diff.add_scaled(-1.0, &gy).unwrap();
            prop_assert!(
                diff.l2_norm() <= l * gap.sqrt() * (1.0 + 1e-9) + 1e-9,
                "smoothness: ‖∇f(x)−∇f(y)‖={}, L‖x−y‖={}",
                diff.l2_norm(),
                l * gap.sqrt()
            );
        }
    }

    /// Exact gradients agree with central finite differences of the loss.
    #[test]
    fn client_gradients_match_finite_differences(
        seed in any::<u64>(),
        xr in prop::collection::vec(-3.0f64..3.0, 4),
        client in 0usize..5,
    ) {
        let suite = quad_suite(seed, 5, 4, 1.0, 0.0);
        let x = ModelParams::from_vec(xr);
        let grad = suite.client_grad(client, &x).unwrap();
        let h = 1e-6;
        for j in 0..x.dim() {
            let mut xp = x.clone();
            xp.as_mut_slice()[j] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[j] -= h;
            let fd = (suite.client_loss(client, &xp).unwrap()
                - suite.client_loss(client, &xm).unwrap())
                / (2.0 * h);
            prop_assert!(
                (fd - grad[j]).abs() <= 1e-5 * (1.0 + grad[j].abs()),
                "coord {j}: fd={fd}, grad={}",
                grad[j]
            );
        }
    }

    /// The geometric averaging weights are a convex combination (constant
    /// iterates come back unchanged) that leans toward late iterates.
    #[test]
    fn weighted_average_reproduces_constants_and_leans_late(
        v in -10.0f64..10.0,
        w in -10.0f64..10.0,
        len in 1usize..20,
        mu in 0.01f64..1.0,
        eta_g in 0.1f64..1.9,
    ) {
        prop_assume!(mu * eta_g / 2.0 < 1.0);
        let dim = 2;
        let constant: Vec<ModelParams> =
            (0..len).map(|_| ModelParams::from_vec(vec![v; dim])).collect();
        let avg = weighted_average_iterate(&constant, mu, eta_g).unwrap();
        for j in 0..dim {
            prop_assert!((avg[j] - v).abs() < 1e-12 * (1.0 + v.abs()));
        }

        prop_assume!((v - w).abs() > 1e-6);
        let two = vec![
            ModelParams::from_vec(vec![v; dim]),
            ModelParams::from_vec(vec![w; dim]),
        ];
        let avg2 = weighted_average_iterate(&two, mu, eta_g).unwrap();
        // Closer to the later iterate w than to the earlier v.
        prop_assert!((avg2[0] - w).abs() < (avg2[0] - v).abs());
    }

    /// The momentum blend at α = 1 is bitwise the plain SGD client, for any
    /// suite, batch noise, step count, and stale momentum buffer.
    #[test]
    fn momentum_blend_at_alpha_one_is_plain_sgd(
        seed in any::<u64>(),
        mom_raw in prop::collection::vec(-2.0f64..2.0, 3),
        steps in 1usize..8,
        lr in 0.01f64..0.5,
    ) {
        let suite = quad_suite(seed, 3, 3, 1.0, 0.4);
        let x = ModelParams::from_vec(vec![1.0, -2.0, 0.5]);
        let momentum = ModelParams::from_vec(mom_raw);
        let cfg = LocalStepConfig {
            lr,
            steps,
            batch: BatchSize::Full,
            grad_clip: None,
            audit: false,
            round: 0,
        };
        let a = client_update_fedcm(
            &x, &momentum, 1.0, suite.client(1), 1, &cfg,
            &mut StreamRoot(seed).client(0, 1),
        ).unwrap();
        let b = client_update_fedavg(
            &x, suite.client(1), 1, &cfg,
            &mut StreamRoot(seed).client(0, 1),
        ).unwrap();
        prop_assert_eq!(
            a.update.displacement.as_slice(),
            b.update.displacement.as_slice()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Whole experiments are bitwise reproducible from their seeds.
    #[test]
    fn experiment_reruns_are_bitwise_identical(
        suite_seed in any::<u64>(),
        run_seed in any::<u64>(),
        alpha in 0.05f64..1.0,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.suite.kind = SuiteKind::Quadratic;
        cfg.suite.n_clients = 4;
        cfg.suite.dim = 3;
        cfg.suite.noise_std = 0.3;
        cfg.suite.seed = suite_seed;
        cfg.algorithm = AlgorithmKind::FedCm;
        cfg.round.alpha = alpha;
        cfg.round.local_steps = 3;
        cfg.participation.kind = ParticipationKind::Bernoulli;
        cfg.participation.p = 0.5;
        cfg.run.rounds = 5;
        cfg.run.seed = run_seed;
        cfg.run.audit = true;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        prop_assert_eq!(a.csv, b.csv);
        prop_assert_eq!(
            a.final_state.params.as_slice(),
            b.final_state.params.as_slice()
        );
    }
}

/// Over many rounds, FixedUniform includes each of the N clients equally
/// often: counts stay within 4 standard errors of T·S/N.
#[test]
fn fixed_uniform_marginals_are_uniform() {
    let (n, s, t) = (20usize, 5usize, 10_000u64);
    let root = StreamRoot(2024);
    let mut counts = vec![0u64; n];
    for round in 0..t {
        let ids =
            sample_participants(&ParticipationScheme::FixedUniform { s }, n, round, root)
                .unwrap();
        for i in ids {
            counts[i] += 1;
        }
    }
    let p = s as f64 / n as f64;
    let expected = t as f64 * p;
    let se = (t as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - expected).abs() <= 4.0 * se,
            "client {i}: {c} inclusions vs expected {expected} ± {:.1}",
            4.0 * se
        );
    }
}

/// Bernoulli participation includes each client with probability ≈ p
/// (N large enough that the non-empty redraw bias is negligible).
#[test]
fn bernoulli_marginals_match_p() {
    let (n, p, t) = (50usize, 0.2f64, 10_000u64);
    let root = StreamRoot(77);
    let mut counts = vec![0u64; n];
    for round in 0..t {
        let ids =
            sample_participants(&ParticipationScheme::Bernoulli { p }, n, round, root).unwrap();
        for i in ids {
            counts[i] += 1;
        }
    }
    let expected = t as f64 * p;
    let se = (t as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - expected).abs() <= 4.0 * se,
            "client {i}: {c} inclusions vs expected {expected} ± {:.1}",
            4.0 * se
        );
    }
}

/// Averaging many stochastic gradients recovers the exact gradient to
/// within 4 standard errors per coordinate (known noise scale).
#[test]
fn stochastic_gradients_are_unbiased() {
    let noise = 0.5;
    let suite = quad_suite(99, 3, 4, 1.0, noise);
    let x = ModelParams::from_vec(vec![0.7, -1.3, 2.0, 0.1]);
    let exact = suite.client_grad(0, &x).unwrap();
    let m = 4000usize;
    let mut rng = StreamRoot(5).client(0, 0);
    let mut mean = vec![0.0f64; x.dim()];
    for _ in 0..m {
        let g = suite
            .client_stoch_grad(0, &x, BatchSize::Full, &mut rng)
            .unwrap();
        for j in 0..x.dim() {
            mean[j] += g[j] / m as f64;
        }
    }
    let se = noise / (m as f64).sqrt();
    for j in 0..x.dim() {
        assert!(
            (mean[j] - exact[j]).abs() <= 4.0 * se,
            "coord {j}: mean {} vs exact {} (±{:.4})",
            mean[j],
            exact[j],
            4.0 * se
        );
    }
}
