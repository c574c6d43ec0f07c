//! Whole experiments: build a suite from configuration, run the round loop,
//! and emit a deterministic CSV history, a JSON summary, optional plots,
//! and α-sweeps with per-cell error isolation.

use crate::algorithms::{Algorithm, FedAdamState, ScaffoldState};
use crate::config::{
    AlgorithmKind, ExperimentConfig, InitKind, PartitionKind, SuiteConfig, SuiteKind,
};
use crate::diagnostics::{rate_constants, weighted_average_iterate, z_sequence};
use crate::engine::{run_round, RoundOptions, RoundRecord};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::partition::{partition, PartitionScheme, PartitionSpec};
use crate::problems::{
    gen_blob_dataset, gen_quadratic_suite, load_suite, logreg_suite_from_partition, ProblemSuite,
    QuadraticSuiteSpec,
};
use crate::rng::StreamRoot;
use crate::state::ServerState;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::path::Path;

/// Construct the problem suite named by the configuration. Deterministic in
/// `cfg.seed`: the suite stream drives data generation and the partition
/// stream drives client assignment, so the same seed always yields the same
/// clients bit for bit.
pub fn build_suite(cfg: &SuiteConfig) -> Result<ProblemSuite> {
    match cfg.kind {
        SuiteKind::Quadratic => {
            let spec = QuadraticSuiteSpec {
                n_clients: cfg.n_clients,
                dim: cfg.dim,
                mu: cfg.mu,
                l: cfg.l,
                hetero: cfg.hetero,
                noise_std: cfg.noise_std,
                spectrum: cfg.spectrum,
            };
            let mut rng = StreamRoot(cfg.seed).suite_gen();
            gen_quadratic_suite(&spec, &mut rng)
        }
        SuiteKind::LogReg => {
            let mut rng = StreamRoot(cfg.seed).suite_gen();
            let total = cfg.samples + cfg.test_samples;
            let data = gen_blob_dataset(total, cfg.features, cfg.classes, cfg.class_sep, &mut rng)?;
            let train_idx: Vec<usize> = (0..cfg.samples).collect();
            let train = data.subset(&train_idx);
            let test = (cfg.test_samples > 0).then(|| {
                let idx: Vec<usize> = (cfg.samples..total).collect();
                data.subset(&idx)
            });
            let scheme = match cfg.partition {
                PartitionKind::Iid => PartitionScheme::Iid,
                PartitionKind::Dirichlet => PartitionScheme::Dirichlet {
                    concentration: cfg.concentration,
                },
            };
            let spec = PartitionSpec { scheme, n_clients: cfg.n_clients };
            let mut prng = StreamRoot(cfg.seed).partition();
            let assignment = partition(&train.labels, &spec, &mut prng)?;
            logreg_suite_from_partition(&train, &assignment, cfg.l2_reg, test)
        }
        SuiteKind::File => {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| Error::config("suite.path", "required when suite.kind = file"))?;
            load_suite(path)
        }
    }
}

/// Starting iterate: all zeros, or scale·N(0, I) from the run seed's
/// initialization stream.
pub fn initial_params(cfg: &ExperimentConfig, dim: usize) -> ModelParams {
    match cfg.init.kind {
        InitKind::Zeros => ModelParams::zeros(dim),
        InitKind::Gaussian => {
            let mut rng = StreamRoot(cfg.run.seed).init();
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cfg.init.scale * z
                })
                .collect();
            ModelParams::from_vec(v)
        }
    }
}

fn make_algorithm(cfg: &ExperimentConfig, n_clients: usize, dim: usize) -> Result<Algorithm> {
    Ok(match cfg.algorithm {
        AlgorithmKind::FedAvg => Algorithm::FedAvg,
        AlgorithmKind::FedCm => Algorithm::FedCm,
        AlgorithmKind::FedAdam => Algorithm::FedAdam(FedAdamState::new(
            cfg.adam.beta1,
            cfg.adam.beta2,
            cfg.adam.tau,
            dim,
        )?),
        AlgorithmKind::Scaffold => Algorithm::Scaffold(ScaffoldState::new(n_clients, dim)),
    })
}

/// Everything a finished run hands back to callers.
#[derive(Debug)]
pub struct RunResult {
    /// One record per executed round (metrics filled on evaluated rounds).
    pub records: Vec<RoundRecord>,
    pub final_state: ServerState,
    /// Machine-readable run summary (one JSON object).
    pub summary: serde_json::Value,
    /// The rendered history table.
    pub csv: String,
}

/// Format a float for the history table: plain decimal notation in the
/// comfortable range, exponent notation outside it. Both forms round-trip,
/// so equal values always render to equal bytes.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const CSV_HEADER: &str = "round,global_loss,suboptimality,grad_norm,delta_norm,participants,drift,ema_residual,z_residual,test_acc";

/// Render evaluated rounds as CSV. Deterministic: no wall-clock columns, and
/// every float formats through `fmt_f64`.
pub fn history_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        if r.global_loss.is_none() {
            continue;
        }
        let participants = r
            .participants
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            fmt_opt(r.global_loss),
            fmt_opt(r.suboptimality),
            fmt_opt(r.grad_norm),
            fmt_f64(r.delta_norm),
            participants,
            fmt_opt(r.drift.as_ref().map(|d| d.epsilon)),
            fmt_opt(r.ema_residual),
            fmt_opt(r.z_residual),
            fmt_opt(r.test_accuracy),
        ));
    }
    out
}

/// Run one experiment end to end. The returned CSV and summary are pure
/// functions of the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let suite = build_suite(&cfg.suite)?;
    let n = suite.n_clients();
    let dim = suite.dim();
    let scheme = cfg.participation.scheme(n);
    scheme.validate(n)?;
    let mut algorithm = make_algorithm(cfg, n, dim)?;
    let root = StreamRoot(cfg.run.seed);
    let x0 = initial_params(cfg, dim);
    let mut state = ServerState::new(x0.clone());

    // The blend weight that governs the shifted sequence: the momentum
    // methods use the configured α, everything else behaves like α = 1.
    let alpha_eff = match cfg.algorithm {
        AlgorithmKind::FedCm => cfg.round.alpha,
        _ => 1.0,
    };
    let eta_g0 = cfg.round.effective_global_lr(0);

    // Reporting-ball bookkeeping when the minimizer is known.
    let known = suite.known.clone();
    let box_radius = match known.as_ref().and_then(|k| k.x_star.as_ref()) {
        Some(xs) => Some(2.0 * x0.dist_sq(xs)?.sqrt()),
        None => None,
    };
    let mut box_violations = 0u64;

    let mut z_list: Vec<ModelParams> = Vec::with_capacity(cfg.run.rounds as usize);
    let mut records = Vec::with_capacity(cfg.run.rounds as usize);
    for t in 0..cfg.run.rounds {
        let evaluate = (t + 1) % cfg.run.eval_every == 0 || t + 1 == cfg.run.rounds;
        let opts = RoundOptions {
            audit: cfg.run.audit,
            audit_all_clients: cfg.run.audit_all_clients,
            evaluate,
            fault_alpha: cfg.fault_alpha,
        };
        z_list.push(z_sequence(
            t,
            &state.params,
            state.prev_params.as_ref(),
            alpha_eff,
        )?);
        let rec = run_round(
            &mut state,
            &mut algorithm,
            &suite,
            &cfg.round,
            &scheme,
            root,
            &opts,
        )?;
        if let (Some(radius), Some(xs)) =
            (box_radius, known.as_ref().and_then(|k| k.x_star.as_ref()))
        {
            if state.params.dist_sq(xs)?.sqrt() > radius {
                box_violations += 1;
            }
        }
        records.push(rec);
    }

    // Summary statistics over the evaluated rounds.
    let last = records.last().expect("at least one round");
    let best_subopt = records
        .iter()
        .filter_map(|r| r.suboptimality)
        .fold(f64::INFINITY, f64::min);
    let worst_ema = records
        .iter()
        .filter_map(|r| r.ema_residual)
        .fold(0.0_f64, f64::max);
    let worst_z = records
        .iter()
        .filter_map(|r| r.z_residual)
        .fold(0.0_f64, f64::max);

    // Geometrically weighted averaged iterate of the shifted sequence, when
    // the curvature is known and the contraction is proper.
    let weighted_avg_subopt = known
        .as_ref()
        .filter(|k| k.mu > 0.0)
        .and_then(|k| weighted_average_iterate(&z_list, k.mu, eta_g0).ok())
        .and_then(|avg| suite.suboptimality(&avg).ok().flatten());

    let constants = rate_constants(&suite, &cfg.round, &scheme, &x0, None).ok();

    let mut summary = serde_json::json!({
        "algorithm": cfg.algorithm.name(),
        "rounds": cfg.run.rounds,
        "n_clients": n,
        "dim": dim,
        "suite_seed": cfg.suite.seed,
        "run_seed": cfg.run.seed,
        "alpha": cfg.round.alpha,
        "local_steps": cfg.round.local_steps,
        "effective_global_lr_round0": eta_g0,
        "final_loss": last.global_loss,
        "final_suboptimality": last.suboptimality,
        "final_grad_norm": last.grad_norm,
        "final_test_accuracy": last.test_accuracy,
        "best_suboptimality": (best_subopt.is_finite()).then_some(best_subopt),
        "weighted_avg_suboptimality": weighted_avg_subopt,
        "max_ema_residual": cfg.run.audit.then_some(worst_ema),
        "max_z_residual": cfg.run.audit.then_some(worst_z),
    });
    if let Some(radius) = box_radius {
        summary["box_radius"] = serde_json::json!(radius);
        summary["box_violations"] = serde_json::json!(box_violations);
    }
    if let Some(c) = constants {
        summary["rate_constants"] = serde_json::to_value(&c).expect("plain struct serializes");
    }

    let csv = history_csv(&records);
    Ok(RunResult { records, final_state: state, summary, csv })
}

/// Write `history.csv`, `summary.json`, and optionally `loss.svg` under
/// `dir`. Returns the paths written.
pub fn persist_run(result: &RunResult, dir: &Path, plot: bool) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv_path = dir.join("history.csv");
    std::fs::write(&csv_path, &result.csv)?;
    written.push(csv_path);
    let sum_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&result.summary)
        .map_err(|e| Error::config("summary", e.to_string()))?;
    text.push('\n');
    std::fs::write(&sum_path, text)?;
    written.push(sum_path);
    if plot {
        let svg_path = dir.join("loss.svg");
        std::fs::write(&svg_path, loss_svg(&result.records))?;
        written.push(svg_path);
    }
    Ok(written)
}

/// Minimal self-contained SVG: log10 of global loss over rounds.
pub fn loss_svg(records: &[RoundRecord]) -> String {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.global_loss.map(|l| (r.round as f64, l.max(1e-300).log10())))
        .collect();
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    if pts.len() >= 2 {
        let (x0, x1) = (pts[0].0, pts[pts.len() - 1].0.max(pts[0].0 + 1.0));
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(_, y) in &pts {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if y1 - y0 < 1e-12 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
             <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - m,
            w - m,
            h - m,
            h - m
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">round</text>\n\
             <text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">log10 loss</text>\n",
            w / 2.0,
            h - 12.0,
            h / 2.0,
            h / 2.0
        ));
    } else {
        svg.push_str("<text x=\"20\" y=\"30\" font-size=\"14\">no evaluated rounds</text>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// One α-sweep cell outcome. Failures are contained: a diverging cell
/// reports its error and the remaining cells still run.
#[derive(Debug)]
pub struct SweepCell {
    pub alpha: f64,
    pub outcome: std::result::Result<RunResult, Error>,
}

/// Rounds until the evaluated suboptimality first drops to `threshold`.
pub fn rounds_to_threshold(records: &[RoundRecord], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.suboptimality.is_some_and(|s| s <= threshold))
        .map(|r| r.round + 1)
}

/// Run the same configuration once per α, in parallel, sharing every seed so
/// cells differ only in the momentum weight.
pub fn run_sweep(base: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<SweepCell>> {
    if alphas.is_empty() {
        return Err(Error::config("sweep.alphas", "need at least one value"));
    }
    for &a in alphas {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::config("sweep.alphas", format!("alpha {a} outside (0, 1]")));
        }
    }
    Ok(alphas
        .par_iter()
        .map(|&alpha| {
            let mut cfg = base.clone();
            cfg.round.alpha = alpha;
            SweepCell { alpha, outcome: run_experiment(&cfg) }
        })
        .collect())
}

/// Write per-cell histories (`alpha_<value>.csv`) plus `sweep.json` (one
/// JSON object per line, cells in the α order given).
pub fn persist_sweep(
    cells: &[SweepCell],
    threshold: f64,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut lines = String::new();
    for cell in cells {
        match &cell.outcome {
            Ok(res) => {
                let csv_path = dir.join(format!("alpha_{}.csv", fmt_f64(cell.alpha)));
                std::fs::write(&csv_path, &res.csv)?;
                written.push(csv_path);
                let line = serde_json::json!({
                    "alpha": cell.alpha,
                    "final_suboptimality": res.summary["final_suboptimality"],
                    "best_suboptimality": res.summary["best_suboptimality"],
                    "final_loss": res.summary["final_loss"],
                    "rounds_to_threshold": rounds_to_threshold(&res.records, threshold),
                    "threshold": threshold,
                });
                lines.push_str(&serde_json::to_string(&line).expect("json"));
                lines.push('\n');
            }
            Err(e) => {
                let line = serde_json::json!({
                    "alpha": cell.alpha,
                    "error": e.to_string(),
                });
                lines.push_str(&serde_json::to_string(&line).expect("json"));
                lines.push('\n');
            }
        }
    }
    let sum_path = dir.join("sweep.json");
    std::fs::write(&sum_path, lines)?;
    written.push(sum_path);
    Ok(written)
}
