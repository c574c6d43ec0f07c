//! `fedsim`: run federated-optimization experiments, α-sweeps, partition
//! inspections, and the built-in verification battery from the terminal.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 failed audit/verification, 1 anything else.

use clap::{Parser, Subcommand};
use fedsim::config::ExperimentConfig;
use fedsim::experiment::{persist_run, persist_sweep, run_experiment, run_sweep};
use fedsim::partition::{partition, partition_stats, PartitionScheme, PartitionSpec};
use fedsim::problems::gen_blob_dataset;
use fedsim::verify::{first_audit_breach, run_verification};
use fedsim::{Error, StreamRoot};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-optimization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary as one JSON object.
    Run {
        /// Config file (`key = value` lines). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set round.alpha=0.1 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the same experiment once per momentum weight α.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma-separated α grid.
        #[arg(long, default_value = "0.05,0.1,0.5,1.0")]
        alphas: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the configured label partition and print its statistics.
    Partition {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Write the sample→client assignment (TSV) to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification battery and report each check.
    Verify,
}

fn load_config(path: Option<&PathBuf>, sets: &[String]) -> fedsim::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for s in sets {
        cfg.apply_set(s)?;
    }
    Ok(cfg)
}

fn cmd_run(
    config: Option<&PathBuf>,
    sets: &[String],
    out: Option<PathBuf>,
) -> fedsim::Result<i32> {
    let mut cfg = load_config(config, sets)?;
    if out.is_some() {
        cfg.output.dir = out;
    }
    let res = run_experiment(&cfg)?;
    if let Some(dir) = &cfg.output.dir {
        for p in persist_run(&res, dir, cfg.output.plot)? {
            eprintln!("wrote {}", p.display());
        }
    }
    println!("{}", res.summary);
    if cfg.run.audit {
        if let Some((round, check, residual, tolerance)) = first_audit_breach(&res.records) {
            return Err(Error::AuditFailure { check, round, residual, tolerance });
        }
    }
    Ok(0)
}

fn cmd_sweep(
    config: Option<&PathBuf>,
    sets: &[String],
    alphas: &str,
    out: Option<PathBuf>,
) -> fedsim::Result<i32> {
    let mut cfg = load_config(config, sets)?;
    if out.is_some() {
        cfg.output.dir = out;
    }
    let grid: Vec<f64> = alphas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("--alphas", format!("bad value `{s}`")))
        })
        .collect::<fedsim::Result<_>>()?;
    let cells = run_sweep(&cfg, &grid)?;
    if let Some(dir) = &cfg.output.dir {
        for p in persist_sweep(&cells, cfg.sweep_threshold, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    let mut first_err: Option<i32> = None;
    for cell in &cells {
        match &cell.outcome {
            Ok(res) => {
                let line = serde_json::json!({
                    "alpha": cell.alpha,
                    "final_suboptimality": res.summary["final_suboptimality"],
                    "final_loss": res.summary["final_loss"],
                    "rounds_to_threshold":
                        fedsim::experiment::rounds_to_threshold(&res.records, cfg.sweep_threshold),
                });
                println!("{line}");
            }
            Err(e) => {
                println!(
                    "{}",
                    serde_json::json!({ "alpha": cell.alpha, "error": e.to_string() })
                );
                first_err.get_or_insert(exit_code(e));
            }
        }
    }
    Ok(first_err.unwrap_or(0))
}

fn cmd_partition(
    config: Option<&PathBuf>,
    sets: &[String],
    out: Option<&PathBuf>,
) -> fedsim::Result<i32> {
    let cfg = load_config(config, sets)?;
    let s = &cfg.suite;
    let mut rng = StreamRoot(s.seed).suite_gen();
    let data = gen_blob_dataset(s.samples, s.features, s.classes, s.class_sep, &mut rng)?;
    let scheme = match s.partition {
        fedsim::config::PartitionKind::Iid => PartitionScheme::Iid,
        fedsim::config::PartitionKind::Dirichlet => PartitionScheme::Dirichlet {
            concentration: s.concentration,
        },
    };
    let spec = PartitionSpec { scheme, n_clients: s.n_clients };
    let mut prng = StreamRoot(s.seed).partition();
    let assignment = partition(&data.labels, &spec, &mut prng)?;
    let stats = partition_stats(&assignment, &data.labels)?;
    println!(
        "{}",
        serde_json::json!({
            "n_clients": assignment.n_clients(),
            "samples_per_client": assignment.quota(),
            "n_classes": assignment.n_classes(),
            "global_distribution": stats.global_distribution,
            "mean_tv_distance": stats.mean_tv_distance,
            "per_client_class_counts": stats.per_client_class_counts,
            "deficit_adjustments": assignment.adjustments().len(),
        })
    );
    if let Some(path) = out {
        std::fs::write(path, assignment.export_text())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_verify() -> fedsim::Result<i32> {
    let report = run_verification()?;
    print!("{}", report.render_text());
    Ok(if report.all_passed() { 0 } else { 4 })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::MalformedSuite(_) | Error::BadPartitionInput(_) => 2,
        Error::NonFinite { .. } => 3,
        Error::AuditFailure { .. } => 4,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, set, out } => cmd_run(config.as_ref(), set, out.clone()),
        Command::Sweep { config, set, alphas, out } => {
            cmd_sweep(config.as_ref(), set, alphas, out.clone())
        }
        Command::Partition { config, set, out } => {
            cmd_partition(config.as_ref(), set, out.as_ref())
        }
        Command::Verify => cmd_verify(),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
