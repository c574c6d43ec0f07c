//! Built-in verification battery: runs audited experiments across a matrix
//! of participation schemes, momentum weights, and local-step counts, and
//! checks the runtime identities, the α = 1 reduction, gradient oracles,
//! determinism, and the fault detector. Every check reports pass/fail with
//! the worst observed residual and its tolerance.

use crate::config::{AlgorithmKind, ExperimentConfig, ParticipationKind};
use crate::error::Result;
use crate::experiment::run_experiment;
use crate::params::ModelParams;
use crate::problems::ProblemSuite;
use crate::rng::StreamRoot;

pub const EMA_TOLERANCE: f64 = 1e-10;
pub const Z_TOLERANCE: f64 = 1e-9;
pub const GRAD_FD_TOLERANCE: f64 = 1e-5;

/// One named check with its measured worst case.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst residual / measured value the check saw.
    pub worst: f64,
    pub tolerance: f64,
    /// Human-readable context (first failing round, cell description, ...).
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, worst: f64, tolerance: f64, detail: String) -> Self {
        CheckOutcome {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check: `PASS|FAIL  name  worst<=tol  detail`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{status}  {:<44} {:.3e} <= {:.1e}  {}\n",
                c.name, c.worst, c.tolerance, c.detail
            ));
        }
        let (ok, total) = (
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
        );
        out.push_str(&format!("{ok}/{total} checks passed\n"));
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct ParticipationCell {
    label: &'static str,
    kind: ParticipationKind,
    n_clients: usize,
    s: usize,
    p: f64,
}

const CELLS: [ParticipationCell; 3] = [
    ParticipationCell {
        label: "fixed_s2_n20",
        kind: ParticipationKind::Fixed,
        n_clients: 20,
        s: 2,
        p: 0.0,
    },
    ParticipationCell {
        label: "bernoulli_p0.1_n100",
        kind: ParticipationKind::Bernoulli,
        n_clients: 100,
        s: 0,
        p: 0.1,
    },
    ParticipationCell {
        label: "full_n20",
        kind: ParticipationKind::Full,
        n_clients: 20,
        s: 0,
        p: 0.0,
    },
];

const ALPHAS: [f64; 4] = [0.05, 0.1, 0.5, 1.0];
const LOCAL_STEPS: [usize; 3] = [1, 5, 10];

fn cell_config(cell: &ParticipationCell, alpha: f64, k: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.suite.n_clients = cell.n_clients;
    cfg.suite.dim = 6;
    cfg.suite.mu = 0.1;
    cfg.suite.l = 1.0;
    cfg.suite.hetero = 1.0;
    cfg.suite.noise_std = 0.1;
    cfg.suite.seed = 41;
    cfg.algorithm = AlgorithmKind::FedCm;
    cfg.round.local_lr = 0.05;
    cfg.round.local_steps = k;
    cfg.round.alpha = alpha;
    cfg.round.scale_global_lr = true;
    cfg.participation.kind = cell.kind;
    cfg.participation.s = cell.s;
    cfg.participation.p = cell.p;
    cfg.run.rounds = 40;
    cfg.run.seed = 97;
    cfg.run.audit = true;
    cfg.run.eval_every = 40;
    cfg
}

fn residual_checks(report: &mut VerifyReport) -> Result<()> {
    for cell in &CELLS {
        for &alpha in &ALPHAS {
            for &k in &LOCAL_STEPS {
                let cfg = cell_config(cell, alpha, k);
                let res = run_experiment(&cfg)?;
                let mut worst_ema = 0.0_f64;
                let mut worst_z = 0.0_f64;
                let mut first_bad: Option<(u64, &'static str, f64)> = None;
                for r in &res.records {
                    let e = r.ema_residual.unwrap_or(0.0);
                    let z = r.z_residual.unwrap_or(0.0);
                    worst_ema = worst_ema.max(e);
                    worst_z = worst_z.max(z);
                    if first_bad.is_none() {
                        if e > EMA_TOLERANCE {
                            first_bad = Some((r.round, "ema", e));
                        } else if z > Z_TOLERANCE {
                            first_bad = Some((r.round, "z", z));
                        }
                    }
                }
                let detail = match first_bad {
                    Some((round, which, v)) => {
                        format!("first failure: round {round} {which} residual {v:.3e}")
                    }
                    None => String::from("all rounds clean"),
                };
                let tag = format!("[{},alpha={alpha},k={k}]", cell.label);
                report.checks.push(CheckOutcome::new(
                    format!("ema_identity{tag}"),
                    worst_ema,
                    EMA_TOLERANCE,
                    detail.clone(),
                ));
                report.checks.push(CheckOutcome::new(
                    format!("shifted_sequence{tag}"),
                    worst_z,
                    Z_TOLERANCE,
                    detail,
                ));
            }
        }
    }
    Ok(())
}

fn reduction_checks(report: &mut VerifyReport) -> Result<()> {
    for cell in &CELLS {
        let mut cm = cell_config(cell, 1.0, 5);
        cm.run.eval_every = 1;
        let mut avg = cm.clone();
        avg.algorithm = AlgorithmKind::FedAvg;
        let a = run_experiment(&avg)?;
        let b = run_experiment(&cm)?;
        let identical = a.csv == b.csv;
        report.checks.push(CheckOutcome::new(
            format!("alpha1_reduces_to_plain_averaging[{}]", cell.label),
            if identical { 0.0 } else { 1.0 },
            0.0,
            if identical {
                "histories byte-identical".into()
            } else {
                "histories differ".into()
            },
        ));
    }
    Ok(())
}

fn determinism_check(report: &mut VerifyReport) -> Result<()> {
    let mut cfg = cell_config(&CELLS[1], 0.1, 5);
    cfg.run.eval_every = 1;
    let a = run_experiment(&cfg)?;
    let b = run_experiment(&cfg)?;
    let identical = a.csv == b.csv && a.summary == b.summary;
    report.checks.push(CheckOutcome::new(
        "deterministic_rerun",
        if identical { 0.0 } else { 1.0 },
        0.0,
        if identical {
            "rerun byte-identical".into()
        } else {
            "rerun diverged".into()
        },
    ));
    Ok(())
}

/// Central finite differences of the averaged objective against the
/// analytic gradient at a handful of points.
fn grad_fd_worst(suite: &ProblemSuite, probes: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = StreamRoot(seed).init();
    let dim = suite.dim();
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..probes {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = ModelParams::from_vec(x);
        let g = suite.global_grad(&x)?;
        for j in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_mut_slice()[j] += h;
            xm.as_mut_slice()[j] -= h;
            let fd = (suite.global_loss(&xp)? - suite.global_loss(&xm)?) / (2.0 * h);
            worst = worst.max((fd - g.as_slice()[j]).abs());
        }
    }
    Ok(worst)
}

fn gradient_checks(report: &mut VerifyReport) -> Result<()> {
    let quad_cfg = cell_config(&CELLS[0], 1.0, 1);
    let quad = crate::experiment::build_suite(&quad_cfg.suite)?;
    let worst = grad_fd_worst(&quad, 5, 13)?;
    report.checks.push(CheckOutcome::new(
        "gradient_finite_difference[quadratic]",
        worst,
        GRAD_FD_TOLERANCE,
        "central differences at 5 random points".into(),
    ));

    let mut lr_cfg = ExperimentConfig::default();
    lr_cfg.suite.kind = crate::config::SuiteKind::LogReg;
    lr_cfg.suite.n_clients = 4;
    lr_cfg.suite.samples = 200;
    lr_cfg.suite.features = 4;
    lr_cfg.suite.classes = 3;
    lr_cfg.suite.l2_reg = 1e-2;
    let logreg = crate::experiment::build_suite(&lr_cfg.suite)?;
    let worst = grad_fd_worst(&logreg, 5, 17)?;
    report.checks.push(CheckOutcome::new(
        "gradient_finite_difference[logreg]",
        worst,
        GRAD_FD_TOLERANCE,
        "central differences at 5 random points".into(),
    ));
    Ok(())
}

/// Inject a wrong mixing weight into the clients and demand the identity
/// check notices. Here a LARGE residual is the success condition.
fn fault_detector_check(report: &mut VerifyReport) -> Result<()> {
    let mut cfg = cell_config(&CELLS[0], 0.1, 5);
    cfg.fault_alpha = Some(0.9);
    let res = run_experiment(&cfg)?;
    let worst = res
        .records
        .iter()
        .filter_map(|r| r.ema_residual)
        .fold(0.0_f64, f64::max);
    let detected = worst > EMA_TOLERANCE;
    report.checks.push(CheckOutcome::new(
        "fault_injection_detected",
        if detected { 0.0 } else { 1.0 },
        0.0,
        format!("worst ema residual under fault: {worst:.3e} (must exceed {EMA_TOLERANCE:.0e})"),
    ));
    Ok(())
}

/// First identity violation in a finished run's records, if any:
/// `(round, check name, residual, tolerance)`. Used to gate audited runs.
pub fn first_audit_breach(
    records: &[crate::engine::RoundRecord],
) -> Option<(u64, &'static str, f64, f64)> {
    for r in records {
        if let Some(e) = r.ema_residual {
            if e > EMA_TOLERANCE {
                return Some((r.round, "ema_identity", e, EMA_TOLERANCE));
            }
        }
        if let Some(z) = r.z_residual {
            if z > Z_TOLERANCE {
                return Some((r.round, "shifted_sequence", z, Z_TOLERANCE));
            }
        }
    }
    None
}

/// Run the whole battery. Execution cost is a few seconds; every cell is
/// seeded, so two invocations produce identical reports.
pub fn run_verification() -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    residual_checks(&mut report)?;
    reduction_checks(&mut report)?;
    determinism_check(&mut report)?;
    gradient_checks(&mut report)?;
    fault_detector_check(&mut report)?;
    Ok(report)
}
