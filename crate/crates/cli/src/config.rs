//! Command-line and config-file parsing into validated jobs.
//!
//! Values come from three layers, highest precedence first: command-line
//! flags, the TOML file given by `--config`, built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use ced_core::observables::RecordingPlan;
use ced_core::phase::{default_sizes, ClassifyBudget, ScanConfig, SearchConfig, Thresholds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: &'static str, message: String },
    #[error("missing required value `{0}`")]
    Missing(&'static str),
    #[error("config file declares job `{file}` but the command is `{command}`")]
    ContradictoryJob { file: String, command: String },
    #[error("cannot read config file {path}: {message}")]
    File { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Usage(_) => "usage",
            ConfigError::InvalidValue { .. } => "invalid_value",
            ConfigError::Missing(_) => "missing_value",
            ConfigError::ContradictoryJob { .. } => "contradictory_job",
            ConfigError::File { .. } => "config_file",
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::InvalidValue { field, .. } | ConfigError::Missing(field) => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ced",
    version,
    about = "Coalescence, evaporation and deposition on a periodic lattice"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one parameter point and report stationary observables.
    Run(Opts),
    /// Classify every point of a (p, q) grid.
    Scan(Opts),
    /// Bracket the critical p at each given q.
    Critical(Opts),
    /// Exact stationary law of a small truncated lattice.
    Oracle(Opts),
    /// Evaluate the bounds registry at a list of q values.
    Bounds(Opts),
}

impl Command {
    fn parts(&self) -> (&'static str, &Opts) {
        match self {
            Command::Run(o) => ("run", o),
            Command::Scan(o) => ("scan", o),
            Command::Critical(o) => ("critical", o),
            Command::Oracle(o) => ("oracle", o),
            Command::Bounds(o) => ("bounds", o),
        }
    }
}

/// Flags shared by all subcommands; each job reads the ones it needs.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opts {
    /// TOML file with default values for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Job kind expected by the config file (file only).
    #[arg(skip)]
    pub job: Option<String>,
    /// Output path prefix; results go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Lattice dimension.
    #[arg(long)]
    pub d: Option<u32>,
    /// Lattice side length.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: Option<u32>,
    /// Evaporation rate per particle.
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Deposition rate per site.
    #[arg(long, allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Simulated time horizon (initial horizon for scans).
    #[arg(long = "t-end", allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    /// Master seed; replicas and scan points derive theirs from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent replicas per simulated lattice.
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Fraction of each trajectory discarded as burn-in.
    #[arg(long = "burn-in", allow_negative_numbers = true)]
    pub burn_in: Option<f64>,
    /// Lattice sizes for finite-size scaling, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u32>>,
    /// Evaporation rates of the scan grid.
    #[arg(long = "p-grid", value_delimiter = ',', allow_negative_numbers = true)]
    pub p_grid: Option<Vec<f64>>,
    /// Deposition rates of the scan grid.
    #[arg(long = "q-grid", value_delimiter = ',', allow_negative_numbers = true)]
    pub q_grid: Option<Vec<f64>>,
    /// Deposition rates for critical searches and bound evaluation.
    #[arg(long = "q-list", value_delimiter = ',', allow_negative_numbers = true)]
    pub q_list: Option<Vec<f64>>,
    /// Target bracket width of the critical search.
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    /// Most points classified per critical search.
    #[arg(long = "max-points")]
    pub max_points: Option<usize>,
    /// Give up expanding the critical search beyond this p.
    #[arg(long = "p-search-max")]
    pub p_search_max: Option<f64>,
    /// Event budget per classified point.
    #[arg(long = "max-events")]
    pub max_events: Option<u64>,
    /// Mass cap of the truncated oracle.
    #[arg(long = "m-max")]
    pub m_max: Option<u64>,
    /// JSON bounds registry.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Lowest mass of the exponential tail fit.
    #[arg(long = "fit-lo")]
    pub fit_lo: Option<usize>,
    /// Highest mass of the exponential tail fit.
    #[arg(long = "fit-hi")]
    pub fit_hi: Option<usize>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        Opts {
            config: $flags.config.clone(),
            job: $file.job.clone(),
            $($field: $flags.$field.clone().or_else(|| $file.$field.clone()),)*
        }
    };
}

impl Opts {
    /// Flags override file values field by field.
    fn over(&self, file: &Opts) -> Opts {
        overlay!(
            self,
            file,
            out,
            d,
            l,
            p,
            q,
            t_end,
            seed,
            replicas,
            burn_in,
            sizes,
            p_grid,
            q_grid,
            q_list,
            tol,
            max_points,
            p_search_max,
            max_events,
            m_max,
            registry,
            fit_lo,
            fit_hi
        )
    }
}

/// A single simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunJob {
    pub d: u32,
    pub l: u32,
    pub p: f64,
    pub q: f64,
    pub t_end: f64,
    pub seed: u64,
    pub replicas: usize,
    pub plan: RecordingPlan,
    pub fit_lo: usize,
    pub fit_hi: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanJob {
    pub config: ScanConfig,
    /// Grid points, `p` major, `q` increasing within each `p`.
    pub grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalJob {
    pub config: ScanConfig,
    pub search: SearchConfig,
    pub q_list: Vec<f64>,
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleJob {
    pub d: u32,
    pub l: u32,
    pub p: f64,
    pub q: f64,
    pub m_max: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsJob {
    pub q_list: Vec<f64>,
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobKind {
    Run(RunJob),
    Scan(ScanJob),
    Critical(CriticalJob),
    Oracle(OracleJob),
    Bounds(BoundsJob),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub kind: JobKind,
    pub out: Option<PathBuf>,
}

fn rate(field: &'static str, v: Option<f64>) -> Result<f64, ConfigError> {
    let v = v.ok_or(ConfigError::Missing(field))?;
    if !v.is_finite() || v < 0.0 {
        return Err(ConfigError::InvalidValue {
            field,
            message: format!("rates must be finite and non-negative, got {v}"),
        });
    }
    Ok(v)
}

fn rates(field: &'static str, v: Option<Vec<f64>>) -> Result<Vec<f64>, ConfigError> {
    let v = v.ok_or(ConfigError::Missing(field))?;
    if v.is_empty() {
        return Err(ConfigError::InvalidValue {
            field,
            message: "list is empty".into(),
        });
    }
    for &x in &v {
        rate(field, Some(x))?;
    }
    Ok(v)
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::InvalidValue {
            field,
            message: format!("must be positive and finite, got {v}"),
        })
    }
}

fn dimension(v: Option<u32>) -> Result<u32, ConfigError> {
    match v.unwrap_or(1) {
        0 => Err(ConfigError::InvalidValue {
            field: "d",
            message: "dimension must be at least 1".into(),
        }),
        d => Ok(d),
    }
}

fn plan(o: &Opts) -> Result<RecordingPlan, ConfigError> {
    let burn = o.burn_in.unwrap_or(0.5);
    if !(0.0..1.0).contains(&burn) {
        return Err(ConfigError::InvalidValue {
            field: "burn-in",
            message: format!("must lie in [0, 1), got {burn}"),
        });
    }
    Ok(RecordingPlan {
        burn_in_fraction: burn,
        ..RecordingPlan::default()
    })
}

fn scan_config(o: &Opts) -> Result<ScanConfig, ConfigError> {
    let d = dimension(o.d)?;
    let sizes = o.sizes.clone().unwrap_or_else(|| default_sizes(d));
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] < 2 {
        return Err(ConfigError::InvalidValue {
            field: "sizes",
            message: "need at least two strictly increasing sizes, each at least 2".into(),
        });
    }
    let defaults = ClassifyBudget::default();
    let budget = ClassifyBudget {
        t_end: positive("t-end", o.t_end.unwrap_or(defaults.t_end))?,
        replicas: o.replicas.unwrap_or(defaults.replicas),
        max_events: o.max_events.unwrap_or(defaults.max_events),
    };
    if budget.replicas == 0 {
        return Err(ConfigError::InvalidValue {
            field: "replicas",
            message: "at least one replica is required".into(),
        });
    }
    Ok(ScanConfig {
        dim: d,
        sizes,
        budget,
        thresholds: Thresholds::default(),
        plan: plan(o)?,
        seed: o.seed.unwrap_or(0),
        execution: ced_core::engine::Execution::Parallel,
    })
}

fn load_file(path: &Path) -> Result<Opts, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Validates the merged options of subcommand `command`.
pub fn build_job(command: &str, o: &Opts) -> Result<Job, ConfigError> {
    if let Some(job) = &o.job {
        if job != command {
            return Err(ConfigError::ContradictoryJob {
                file: job.clone(),
                command: command.to_string(),
            });
        }
    }
    let kind = match command {
        "run" => {
            let l = o.l.ok_or(ConfigError::Missing("L"))?;
            if l < 2 {
                return Err(ConfigError::InvalidValue {
                    field: "L",
                    message: format!("simulations need L >= 2, got {l}"),
                });
            }
            let replicas = o.replicas.unwrap_or(1);
            if replicas == 0 {
                return Err(ConfigError::InvalidValue {
                    field: "replicas",
                    message: "at least one replica is required".into(),
                });
            }
            let job = RunJob {
                d: dimension(o.d)?,
                l,
                p: rate("p", o.p)?,
                q: rate("q", o.q)?,
                t_end: positive("t-end", o.t_end.unwrap_or(1e4))?,
                seed: o.seed.unwrap_or(0),
                replicas,
                plan: plan(o)?,
                fit_lo: o.fit_lo.unwrap_or(1),
                fit_hi: o.fit_hi.unwrap_or(10),
            };
            if job.fit_hi < job.fit_lo + 4 {
                return Err(ConfigError::InvalidValue {
                    field: "fit-hi",
                    message: "the fit range needs at least 5 masses".into(),
                });
            }
            JobKind::Run(job)
        }
        "scan" => {
            let config = scan_config(o)?;
            let ps = rates("p-grid", o.p_grid.clone())?;
            let qs = rates("q-grid", o.q_grid.clone())?;
            let grid = ps.iter().flat_map(|&p| qs.iter().map(move |&q| (p, q))).collect();
            JobKind::Scan(ScanJob { config, grid })
        }
        "critical" => {
            let defaults = SearchConfig::default();
            let search = SearchConfig {
                tol: positive("tol", o.tol.unwrap_or(defaults.tol))?,
                max_points: o.max_points.unwrap_or(defaults.max_points),
                p_search_max: positive("p-search-max", o.p_search_max.unwrap_or(defaults.p_search_max))?,
            };
            let q_list = match (&o.q_list, o.q) {
                (Some(_), _) => rates("q-list", o.q_list.clone())?,
                (None, Some(q)) => vec![rate("q", Some(q))?],
                (None, None) => return Err(ConfigError::Missing("q-list")),
            };
            JobKind::Critical(CriticalJob {
                config: scan_config(o)?,
                search,
                q_list,
                registry: o.registry.clone(),
            })
        }
        "oracle" => {
            let l = o.l.ok_or(ConfigError::Missing("L"))?;
            if l < 1 {
                return Err(ConfigError::InvalidValue {
                    field: "L",
                    message: "side length must be at least 1".into(),
                });
            }
            let m_max = o.m_max.unwrap_or(30);
            if m_max < 1 {
                return Err(ConfigError::InvalidValue {
                    field: "m-max",
                    message: "mass cap must be at least 1".into(),
                });
            }
            JobKind::Oracle(OracleJob {
                d: dimension(o.d)?,
                l,
                p: rate("p", o.p)?,
                q: rate("q", o.q)?,
                m_max,
            })
        }
        "bounds" => {
            let q_list = match (&o.q_list, o.q) {
                (Some(_), _) => rates("q-list", o.q_list.clone())?,
                (None, Some(q)) => vec![rate("q", Some(q))?],
                (None, None) => return Err(ConfigError::Missing("q-list")),
            };
            JobKind::Bounds(BoundsJob {
                q_list,
                registry: o.registry.clone(),
            })
        }
        other => return Err(ConfigError::Usage(format!("unknown job `{other}`"))),
    };
    Ok(Job {
        kind,
        out: o.out.clone(),
    })
}

/// Parses `args` (program name first) into a validated job.
pub fn parse_config<I, T>(args: I) -> Result<Job, ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            ParseOutcome::Info(e.to_string())
        }
        _ => ParseOutcome::Error(ConfigError::Usage(e.to_string())),
    })?;
    let (command, flags) = cli.command.parts();
    let merged = match &flags.config {
        Some(path) => flags.over(&load_file(path).map_err(ParseOutcome::Error)?),
        None => flags.clone(),
    };
    build_job(command, &merged).map_err(ParseOutcome::Error)
}

/// Non-job results of argument parsing.
#[derive(Debug)]
pub enum ParseOutcome {
    /// Help or version text to print before exiting successfully.
    Info(String),
    Error(ConfigError),
}
