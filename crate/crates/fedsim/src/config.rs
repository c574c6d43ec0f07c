//! Flat `key = value` run configuration: parsing, defaults, validation, and
//! command-line overrides. Unknown keys are hard errors so typos cannot
//! silently fall back to defaults.

use crate::error::{Error, Result};
use crate::problems::SpectrumMode;
use crate::sampling::ParticipationScheme;
use crate::state::{BatchSize, RoundConfig};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    Quadratic,
    LogReg,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

/// How the problem suite is obtained: synthesized (quadratic or logistic
/// regression over a partitioned blob dataset) or loaded from disk.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    pub n_clients: usize,
    pub seed: u64,
    // quadratic
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    pub hetero: f64,
    pub noise_std: f64,
    pub spectrum: SpectrumMode,
    // logistic regression
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub class_sep: f64,
    pub l2_reg: f64,
    pub partition: PartitionKind,
    pub concentration: f64,
    pub test_samples: usize,
    // file
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmKind {
    FedAvg,
    FedCm,
    FedAdam,
    Scaffold,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::FedAvg => "fedavg",
            AlgorithmKind::FedCm => "fedcm",
            AlgorithmKind::FedAdam => "fedadam",
            AlgorithmKind::Scaffold => "scaffold",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticipationKind {
    Full,
    Fixed,
    Bernoulli,
}

#[derive(Debug, Clone, Copy)]
pub struct ParticipationConfig {
    pub kind: ParticipationKind,
    pub s: usize,
    pub p: f64,
}

impl ParticipationConfig {
    pub fn scheme(&self, n_clients: usize) -> ParticipationScheme {
        match self.kind {
            ParticipationKind::Full => ParticipationScheme::full(n_clients),
            ParticipationKind::Fixed => ParticipationScheme::FixedUniform { s: self.s },
            ParticipationKind::Bernoulli => ParticipationScheme::Bernoulli { p: self.p },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunSection {
    pub rounds: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub audit: bool,
    pub audit_all_clients: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub kind: InitKind,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub plot: bool,
}

/// The complete description of one run (or one sweep cell).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    pub algorithm: AlgorithmKind,
    pub adam: AdamConfig,
    pub round: RoundConfig,
    pub participation: ParticipationConfig,
    pub run: RunSection,
    pub init: InitConfig,
    pub output: OutputConfig,
    /// Suboptimality threshold used by sweep reports (rounds-to-threshold).
    pub sweep_threshold: f64,
    /// Fault injection for audit-detector demonstrations.
    pub fault_alpha: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            suite: SuiteConfig {
                kind: SuiteKind::Quadratic,
                n_clients: 10,
                seed: 1,
                dim: 5,
                mu: 0.1,
                l: 1.0,
                hetero: 1.0,
                noise_std: 0.0,
                spectrum: SpectrumMode::Shared,
                samples: 2000,
                features: 10,
                classes: 5,
                class_sep: 1.5,
                l2_reg: 1e-3,
                partition: PartitionKind::Iid,
                concentration: 0.5,
                test_samples: 0,
                path: None,
            },
            algorithm: AlgorithmKind::FedAvg,
            adam: AdamConfig { beta1: 0.9, beta2: 0.99, tau: 0.01 },
            round: RoundConfig::default(),
            participation: ParticipationConfig {
                kind: ParticipationKind::Full,
                s: 1,
                p: 0.1,
            },
            run: RunSection {
                rounds: 50,
                eval_every: 1,
                seed: 7,
                audit: false,
                audit_all_clients: false,
            },
            init: InitConfig { kind: InitKind::Zeros, scale: 1.0 },
            output: OutputConfig { dir: None, plot: false },
            sweep_threshold: 1e-4,
            fault_alpha: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::config(key, format!("expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
    }
}

/// Parse a whole config text. Lines are `key = value`; blank lines and
/// lines starting with `#` are skipped; later assignments override earlier
/// ones.
impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Apply one `key=value` override (the CLI's `--set`), then re-validate.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::config(
                "--set",
                format!("expected `key=value`, got `{assignment}`"),
            ));
        };
        self.set(key.trim(), value.trim())?;
        self.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "suite.kind" => {
                self.suite.kind = match value {
                    "quadratic" => SuiteKind::Quadratic,
                    "logreg" => SuiteKind::LogReg,
                    "file" => SuiteKind::File,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected quadratic|logreg|file, got `{value}`"),
                        ))
                    }
                }
            }
            "suite.n_clients" => self.suite.n_clients = parse_usize(key, value)?,
            "suite.seed" => self.suite.seed = parse_u64(key, value)?,
            "suite.dim" => self.suite.dim = parse_usize(key, value)?,
            "suite.mu" => self.suite.mu = parse_f64(key, value)?,
            "suite.l" => self.suite.l = parse_f64(key, value)?,
            "suite.hetero" => self.suite.hetero = parse_f64(key, value)?,
            "suite.noise_std" => self.suite.noise_std = parse_f64(key, value)?,
            "suite.spectrum" => {
                self.suite.spectrum = match value {
                    "shared" => SpectrumMode::Shared,
                    "per_client" => SpectrumMode::PerClient,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected shared|per_client, got `{value}`"),
                        ))
                    }
                }
            }
            "suite.samples" => self.suite.samples = parse_usize(key, value)?,
            "suite.features" => self.suite.features = parse_usize(key, value)?,
            "suite.classes" => self.suite.classes = parse_usize(key, value)?,
            "suite.class_sep" => self.suite.class_sep = parse_f64(key, value)?,
            "suite.l2_reg" => self.suite.l2_reg = parse_f64(key, value)?,
            "suite.partition" => {
                self.suite.partition = match value {
                    "iid" => PartitionKind::Iid,
                    "dirichlet" => PartitionKind::Dirichlet,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected iid|dirichlet, got `{value}`"),
                        ))
                    }
                }
            }
            "suite.concentration" => self.suite.concentration = parse_f64(key, value)?,
            "suite.test_samples" => self.suite.test_samples = parse_usize(key, value)?,
            "suite.path" => self.suite.path = Some(PathBuf::from(value)),
            "algorithm" => {
                self.algorithm = match value {
                    "fedavg" => AlgorithmKind::FedAvg,
                    "fedcm" => AlgorithmKind::FedCm,
                    "fedadam" => AlgorithmKind::FedAdam,
                    "scaffold" => AlgorithmKind::Scaffold,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected fedavg|fedcm|fedadam|scaffold, got `{value}`"),
                        ))
                    }
                }
            }
            "adam.beta1" => self.adam.beta1 = parse_f64(key, value)?,
            "adam.beta2" => self.adam.beta2 = parse_f64(key, value)?,
            "adam.tau" => self.adam.tau = parse_f64(key, value)?,
            "round.local_lr" => self.round.local_lr = parse_f64(key, value)?,
            "round.global_lr" => self.round.global_lr = parse_f64(key, value)?,
            "round.local_steps" => self.round.local_steps = parse_usize(key, value)?,
            "round.alpha" => self.round.alpha = parse_f64(key, value)?,
            "round.batch" => {
                self.round.batch = if value == "full" {
                    BatchSize::Full
                } else {
                    BatchSize::Size(parse_usize(key, value)?)
                }
            }
            "round.lr_decay" => self.round.lr_decay = parse_f64(key, value)?,
            "round.scale_global_lr" => self.round.scale_global_lr = parse_bool(key, value)?,
            "round.grad_clip" => {
                self.round.grad_clip = if value == "none" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            "participation.kind" => {
                self.participation.kind = match value {
                    "full" => ParticipationKind::Full,
                    "fixed" => ParticipationKind::Fixed,
                    "bernoulli" => ParticipationKind::Bernoulli,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected full|fixed|bernoulli, got `{value}`"),
                        ))
                    }
                }
            }
            "participation.s" => self.participation.s = parse_usize(key, value)?,
            "participation.p" => self.participation.p = parse_f64(key, value)?,
            "run.rounds" => self.run.rounds = parse_u64(key, value)?,
            "run.eval_every" => self.run.eval_every = parse_u64(key, value)?,
            "run.seed" => self.run.seed = parse_u64(key, value)?,
            "run.audit" => self.run.audit = parse_bool(key, value)?,
            "run.audit_all_clients" => self.run.audit_all_clients = parse_bool(key, value)?,
            "init.kind" => {
                self.init.kind = match value {
                    "zeros" => InitKind::Zeros,
                    "gaussian" => InitKind::Gaussian,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected zeros|gaussian, got `{value}`"),
                        ))
                    }
                }
            }
            "init.scale" => self.init.scale = parse_f64(key, value)?,
            "output.dir" => self.output.dir = Some(PathBuf::from(value)),
            "output.plot" => self.output.plot = parse_bool(key, value)?,
            "sweep.threshold" => self.sweep_threshold = parse_f64(key, value)?,
            "debug.fault_alpha" => {
                self.fault_alpha = if value == "none" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.round.validate()?;
        let s = &self.suite;
        if s.n_clients == 0 {
            return Err(Error::config("suite.n_clients", "must be >= 1"));
        }
        match s.kind {
            SuiteKind::Quadratic => {
                if s.dim == 0 {
                    return Err(Error::config("suite.dim", "must be >= 1"));
                }
                if !(s.mu >= 0.0) || !(s.l > 0.0) || s.mu > s.l {
                    return Err(Error::config("suite.mu", "need 0 <= mu <= l and l > 0"));
                }
                if !(s.hetero >= 0.0) {
                    return Err(Error::config("suite.hetero", "must be >= 0"));
                }
                if !(s.noise_std >= 0.0) {
                    return Err(Error::config("suite.noise_std", "must be >= 0"));
                }
            }
            SuiteKind::LogReg => {
                if s.features == 0 {
                    return Err(Error::config("suite.features", "must be >= 1"));
                }
                if s.classes < 2 {
                    return Err(Error::config("suite.classes", "must be >= 2"));
                }
                if s.samples < s.n_clients {
                    return Err(Error::config(
                        "suite.samples",
                        "need at least one sample per client",
                    ));
                }
                if !(s.l2_reg >= 0.0) {
                    return Err(Error::config("suite.l2_reg", "must be >= 0"));
                }
                if s.partition == PartitionKind::Dirichlet && !(s.concentration > 0.0) {
                    return Err(Error::config("suite.concentration", "must be > 0"));
                }
            }
            SuiteKind::File => {
                if s.path.is_none() {
                    return Err(Error::config("suite.path", "required when suite.kind = file"));
                }
            }
        }
        let a = &self.adam;
        if self.algorithm == AlgorithmKind::FedAdam {
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
                return Err(Error::config("adam.beta1", "betas must lie in [0, 1)"));
            }
            if !(a.tau > 0.0) {
                return Err(Error::config("adam.tau", "must be > 0"));
            }
        }
        match self.participation.kind {
            ParticipationKind::Full => {}
            ParticipationKind::Fixed => {
                if self.participation.s == 0 || self.participation.s > s.n_clients {
                    return Err(Error::config(
                        "participation.s",
                        "must lie in 1..=suite.n_clients",
                    ));
                }
            }
            ParticipationKind::Bernoulli => {
                if !(self.participation.p > 0.0 && self.participation.p <= 1.0) {
                    return Err(Error::config("participation.p", "must lie in (0, 1]"));
                }
            }
        }
        if self.run.rounds == 0 {
            return Err(Error::config("run.rounds", "must be >= 1"));
        }
        if self.run.eval_every == 0 {
            return Err(Error::config("run.eval_every", "must be >= 1"));
        }
        if self.init.kind == InitKind::Gaussian && !(self.init.scale > 0.0) {
            return Err(Error::config("init.scale", "must be > 0 for gaussian init"));
        }
        if !(self.sweep_threshold > 0.0) {
            return Err(Error::config("sweep.threshold", "must be > 0"));
        }
        if let Some(fa) = self.fault_alpha {
            if !(fa > 0.0 && fa <= 1.0) {
                return Err(Error::config("debug.fault_alpha", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}
