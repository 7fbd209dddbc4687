//! Job execution.

use std::path::PathBuf;

use thiserror::Error;

use ced_core::engine::{run_replicas, EngineConfig, EngineError, Execution};
use ced_core::model::{Geometry, ModelError, Params, HOP_CONVENTION, HOP_RATE};
use ced_core::observables::{growth_of_trace, tail_fit_exponential, DEFAULT_BATCHES, GROWTH_THRESHOLD};
use ced_core::oracle::{single_site_stationary, solve_lattice, OracleError, CAP_MASS_TOLERANCE};
use ced_core::phase::bounds::{evaluate_bounds, BoundsEntry, BoundsError, BoundsRegistry};
use ced_core::phase::{estimate_critical_p, sweep, PhaseError, ScanConfig};

use crate::config::{BoundsJob, CriticalJob, Job, JobKind, OracleJob, RunJob, ScanJob};
use crate::report::{
    self, BoundsReport, ClassifyEcho, CriticalReport, OracleReport, Outcome, ReportError, RunConfigEcho,
    RunObservables, RunReport, RunTotals, ScanReport, ToolInfo,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("bounds registry: {0}")]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CommandError {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandError::Model(_) => "model",
            CommandError::Engine(_) => "engine",
            CommandError::Phase(_) => "phase",
            CommandError::Oracle(_) => "oracle",
            CommandError::Bounds(_) => "bounds",
            CommandError::Report(_) => "io",
        }
    }
}

/// Result of a job: the primary report as JSON, plus any files written.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: String,
    pub files: Vec<PathBuf>,
}

pub fn run_report(job: &RunJob, execution: Execution) -> Result<RunReport, CommandError> {
    let config = EngineConfig {
        geom: Geometry::new(job.d, job.l)?,
        params: Params::new(job.p, job.q)?,
        t_end: job.t_end,
        seed: job.seed,
    };
    let set = run_replicas(&config, job.replicas, &job.plan, execution)?;
    let acc = &set.merged;
    let histogram = acc.mass_histogram();
    let tail_fit = match &histogram {
        Ok(h) => Outcome::from_result(tail_fit_exponential(h, job.fit_lo, job.fit_hi)),
        Err(e) => Outcome::Error(e.to_string()),
    };
    Ok(RunReport {
        tool: ToolInfo::current(),
        config: RunConfigEcho {
            d: job.d,
            l: job.l,
            p: job.p,
            q: job.q,
            t_end: job.t_end,
            seed: job.seed,
            replicas: job.replicas,
            hop_convention: HOP_CONVENTION.into(),
            hop_rate: HOP_RATE,
            plan: job.plan,
            n_batches: DEFAULT_BATCHES,
            growth_threshold: GROWTH_THRESHOLD,
            fit_lo: job.fit_lo,
            fit_hi: job.fit_hi,
        },
        stats: RunTotals::from_runs(&set.runs),
        observables: RunObservables {
            sampled_time: acc.elapsed(),
            mean_site_mass: Outcome::from_result(acc.mean_site_mass()),
            mean_site_mass_ci: Outcome::from_result(acc.mean_site_mass_ci(DEFAULT_BATCHES)),
            density: Outcome::from_result(acc.occupied_density()),
            density_ci: Outcome::from_result(acc.density_ci(DEFAULT_BATCHES)),
            histogram: Outcome::from_result(histogram),
        },
        tail_fit,
        growth: Outcome::from_result(growth_of_trace(&set.trace, GROWTH_THRESHOLD)),
    })
}

pub fn scan_report(job: &ScanJob) -> Result<ScanReport, CommandError> {
    Ok(ScanReport {
        tool: ToolInfo::current(),
        hop_convention: HOP_CONVENTION.into(),
        table: sweep(&job.grid, &job.config)?,
    })
}

fn classify_echo(config: &ScanConfig) -> ClassifyEcho {
    ClassifyEcho {
        d: config.dim,
        sizes: config.sizes.clone(),
        seed: config.seed,
        hop_convention: HOP_CONVENTION.into(),
        budget: config.budget,
        thresholds: config.thresholds,
        plan: config.plan,
    }
}

/// Reads a JSON array of bound entries; no path means an empty registry.
pub fn load_registry(path: Option<&std::path::Path>) -> Result<BoundsRegistry, CommandError> {
    match path {
        None => Ok(BoundsRegistry::default()),
        Some(p) => {
            let entries: Vec<BoundsEntry> = report::read_json(p)?;
            Ok(BoundsRegistry::new(entries)?)
        }
    }
}

pub fn critical_report(job: &CriticalJob) -> Result<CriticalReport, CommandError> {
    let registry = load_registry(job.registry.as_deref())?;
    let estimates = job
        .q_list
        .iter()
        .map(|&q| estimate_critical_p(q, &job.config, &job.search))
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = job.q_list.iter().map(|&q| evaluate_bounds(&registry, q)).collect();
    Ok(CriticalReport {
        tool: ToolInfo::current(),
        config: classify_echo(&job.config),
        search: job.search,
        estimates,
        bounds,
    })
}

pub fn oracle_report(job: &OracleJob) -> Result<OracleReport, CommandError> {
    let geom = Geometry::new(job.d, job.l)?;
    let params = Params::new(job.p, job.q)?;
    let dist = solve_lattice(geom, &params, job.m_max)?;
    let closed_form = if geom.sites() == 1 {
        single_site_stationary(&params).ok()
    } else {
        None
    };
    Ok(OracleReport {
        tool: ToolInfo::current(),
        d: job.d,
        l: job.l,
        p: job.p,
        q: job.q,
        m_max: job.m_max,
        hop_convention: HOP_CONVENTION.into(),
        states: dist.space.len(),
        marginal: dist.site_marginal(),
        mean_site_mass: dist.expected_site_mass(),
        cap_mass: dist.cap_mass,
        cap_mass_tolerance: CAP_MASS_TOLERANCE,
        residual: dist.residual,
        reliable: dist.is_reliable(),
        closed_form,
    })
}

pub fn bounds_report(job: &BoundsJob) -> Result<BoundsReport, CommandError> {
    let registry = load_registry(job.registry.as_deref())?;
    let mut evaluations: Vec<_> = job.q_list.iter().map(|&q| evaluate_bounds(&registry, q)).collect();
    if registry.is_empty() {
        for e in &mut evaluations {
            e.notices.push("bounds registry is empty; nothing to evaluate".into());
        }
    }
    Ok(BoundsReport {
        tool: ToolInfo::current(),
        registry: job.registry.clone(),
        entries: registry.len(),
        evaluations,
    })
}

/// Runs `job`; with an output prefix the reports also go to files.
pub fn execute(job: &Job) -> Result<Output, CommandError> {
    let out = job.out.as_deref();
    let (json, files) = match &job.kind {
        JobKind::Run(j) => {
            let r = run_report(j, Execution::Parallel)?;
            let files = out.map(|p| report::write_report(&r, p)).transpose()?;
            (report::to_json(&r), files)
        }
        JobKind::Scan(j) => {
            let r = scan_report(j)?;
            let files = out.map(|p| report::write_scan(&r, p)).transpose()?;
            (report::to_json(&r), files)
        }
        JobKind::Critical(j) => {
            let r = critical_report(j)?;
            let files = out.map(|p| report::write_critical(&r, p)).transpose()?;
            (report::to_json(&r), files)
        }
        JobKind::Oracle(j) => {
            let r = oracle_report(j)?;
            let files = out.map(|p| report::write_oracle(&r, p)).transpose()?;
            (report::to_json(&r), files)
        }
        JobKind::Bounds(j) => {
            let r = bounds_report(j)?;
            let files = out.map(|p| report::write_bounds(&r, p)).transpose()?;
            (report::to_json(&r), files)
        }
    };
    Ok(Output {
        json,
        files: files.unwrap_or_default(),
    })
}
