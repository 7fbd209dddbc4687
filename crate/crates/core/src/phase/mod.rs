//! Locating the phase transition in the `(p, q)` plane.
//!
//! The two phases differ by whether the stationary mass per site is finite,
//! which a finite periodic lattice cannot show directly. A point is judged by
//! finite-size scaling: the time-averaged mass per site must stay flat as the
//! side length grows and the total mass must saturate in time for the
//! exponential phase; steady growth in time at every size, or a mean mass
//! that keeps increasing with the size, marks the growing phase. Points that
//! meet neither rule are reported as undecided rather than forced.

pub mod bounds;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{derive_seed, run_replicas, thread_pool, EngineConfig, EngineError, Execution};
use crate::model::{Geometry, ModelError, Params};
use crate::observables::{
    growth_of_trace, BatchEstimate, Growth, GrowthReport, ObservablesError, RecordingPlan, DEFAULT_BATCHES,
    GROWTH_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("invalid scan input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Exponential,
    Growing,
    Undecided,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Exponential => "Exponential",
            Verdict::Growing => "Growing",
            Verdict::Undecided => "Undecided",
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Exponential" => Ok(Verdict::Exponential),
            "Growing" => Ok(Verdict::Growing),
            "Undecided" => Ok(Verdict::Undecided),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

/// Decision thresholds; echoed in every output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Half-width of the band around 1 a size ratio must stay in to be flat.
    pub flat_epsilon: f64,
    /// Excess over 1 a size ratio must clear to count as growth with size.
    pub size_growth: f64,
    /// Relative increase per half-window for growth in time.
    pub time_growth: f64,
    /// Standard errors added to a ratio before comparing it with a band.
    pub ci_sigmas: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            flat_epsilon: 0.1,
            size_growth: 0.2,
            time_growth: GROWTH_THRESHOLD,
            ci_sigmas: 2.0,
        }
    }
}

/// Simulation effort spent on one point.
///
/// Runs start at `t_end` with `replicas` replicas per size. While the verdict
/// is undecided the horizon is doubled, as long as the projected event count
/// stays within `max_events`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyBudget {
    pub t_end: f64,
    pub replicas: usize,
    pub max_events: u64,
}

impl Default for ClassifyBudget {
    fn default() -> Self {
        ClassifyBudget {
            t_end: 4_000.0,
            replicas: 4,
            max_events: 400_000_000,
        }
    }
}

/// Everything shared by the points of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub dim: u32,
    pub sizes: Vec<u32>,
    pub budget: ClassifyBudget,
    pub thresholds: Thresholds,
    pub plan: RecordingPlan,
    pub seed: u64,
    pub execution: Execution,
}

impl ScanConfig {
    pub fn new(dim: u32, seed: u64) -> Self {
        ScanConfig {
            dim,
            sizes: default_sizes(dim),
            budget: ClassifyBudget::default(),
            thresholds: Thresholds::default(),
            plan: RecordingPlan::default(),
            seed,
            execution: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if self.sizes.len() < 2 {
            return Err(PhaseError::InvalidInput(
                "at least two lattice sizes are required".into(),
            ));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PhaseError::InvalidInput("sizes must be strictly increasing".into()));
        }
        if self.sizes[0] < 2 {
            return Err(PhaseError::InvalidInput("simulated sizes must be at least 2".into()));
        }
        for &l in &self.sizes {
            Geometry::new(self.dim, l)?;
        }
        if !(self.budget.t_end > 0.0 && self.budget.t_end.is_finite()) || self.budget.replicas == 0 {
            return Err(PhaseError::InvalidInput(
                "budget needs a positive horizon and at least one replica".into(),
            ));
        }
        self.plan.validate()?;
        Ok(())
    }
}

/// Side lengths used when none are given.
pub fn default_sizes(dim: u32) -> Vec<u32> {
    match dim {
        1 => vec![16, 32, 64],
        2 => vec![8, 16, 32],
        _ => vec![4, 8, 16],
    }
}

/// Statistics gathered at one side length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEvidence {
    pub side: u32,
    pub t_end: f64,
    pub replicas: usize,
    pub seed: u64,
    pub mean_mass: BatchEstimate,
    pub density: BatchEstimate,
    pub growth: GrowthReport,
    pub events: u64,
}

/// Ratio of the mean site mass at consecutive sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRatio {
    pub from: u32,
    pub to: u32,
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Decided without simulation: a stationary state would need an occupied
    /// density `q / p` above one.
    MassBalance,
    /// Decided from the simulated evidence.
    FiniteSize,
    /// Still undecided when the event budget ran out.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVerdict {
    pub p: f64,
    pub q: f64,
    pub verdict: Verdict,
    pub basis: Basis,
    pub sizes: Vec<u32>,
    pub seed: u64,
    /// Evidence of the last (longest) round of runs; empty under
    /// [`Basis::MassBalance`].
    pub evidence: Vec<SizeEvidence>,
    pub ratios: Vec<SizeRatio>,
    pub events: u64,
    pub thresholds: Thresholds,
}

impl PhaseVerdict {
    /// Side of the transition an undecided point leans to: growing when the
    /// mean mass rises with size beyond the flatness band or the largest
    /// lattice still grows in time.
    pub fn lean(&self) -> Verdict {
        match self.verdict {
            Verdict::Undecided => {}
            v => return v,
        }
        let overall = match (self.evidence.first(), self.evidence.last()) {
            (Some(a), Some(b)) if a.mean_mass.mean > 0.0 => b.mean_mass.mean / a.mean_mass.mean,
            (Some(_), Some(b)) if b.mean_mass.mean > 0.0 => f64::INFINITY,
            _ => 1.0,
        };
        let growing_in_time = self
            .evidence
            .last()
            .is_some_and(|e| e.growth.verdict == Growth::Growing);
        if overall > 1.0 + self.thresholds.flat_epsilon || growing_in_time {
            Verdict::Growing
        } else {
            Verdict::Exponential
        }
    }

    /// Mean site mass per simulated size, in size order.
    pub fn mean_masses(&self) -> Vec<Option<f64>> {
        self.sizes
            .iter()
            .map(|&l| self.evidence.iter().find(|e| e.side == l).map(|e| e.mean_mass.mean))
            .collect()
    }
}

/// True when rates alone rule out a stationary state on any finite lattice.
pub fn forced_growing(params: &Params) -> bool {
    (params.p > 0.0 && params.q >= params.p) || (params.p == 0.0 && params.q > 0.0)
}

fn size_ratio(a: &SizeEvidence, b: &SizeEvidence) -> SizeRatio {
    let (ma, mb) = (a.mean_mass.mean, b.mean_mass.mean);
    let (ratio, stderr) = if ma > 0.0 && mb > 0.0 {
        let r = mb / ma;
        let rel = (a.mean_mass.stderr / ma).hypot(b.mean_mass.stderr / mb);
        (r, r * rel)
    } else if ma == 0.0 && mb == 0.0 {
        (1.0, 0.0)
    } else if ma == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 0.0)
    };
    SizeRatio {
        from: a.side,
        to: b.side,
        ratio,
        stderr,
    }
}

/// Applies the decision rule to one round of evidence (sizes increasing).
pub fn decide(evidence: &[SizeEvidence], thresholds: &Thresholds) -> (Verdict, Vec<SizeRatio>) {
    let ratios: Vec<SizeRatio> = evidence.windows(2).map(|w| size_ratio(&w[0], &w[1])).collect();
    let z = thresholds.ci_sigmas;
    let flat = ratios
        .iter()
        .all(|r| (r.ratio - 1.0).abs() + z * r.stderr <= thresholds.flat_epsilon);
    let grows_with_size = ratios
        .iter()
        .all(|r| r.ratio - z * r.stderr > 1.0 + thresholds.size_growth);
    let saturating = evidence.last().is_some_and(|e| e.growth.verdict == Growth::Saturating);
    let grows_in_time = evidence.iter().all(|e| e.growth.verdict == Growth::Growing);
    let verdict = if flat && saturating {
        Verdict::Exponential
    } else if grows_with_size || grows_in_time {
        Verdict::Growing
    } else {
        Verdict::Undecided
    };
    (verdict, ratios)
}

fn gather(
    params: Params,
    config: &ScanConfig,
    point_seed: u64,
    round: u32,
    t_end: f64,
) -> Result<Vec<SizeEvidence>, PhaseError> {
    let one = |&side: &u32| -> Result<SizeEvidence, PhaseError> {
        let seed = derive_seed(point_seed, ((round as u64) << 32) | side as u64);
        let engine = EngineConfig {
            geom: Geometry::new(config.dim, side)?,
            params,
            t_end,
            seed,
        };
        let set = run_replicas(&engine, config.budget.replicas, &config.plan, config.execution)?;
        Ok(SizeEvidence {
            side,
            t_end,
            replicas: config.budget.replicas,
            seed,
            mean_mass: set.merged.mean_site_mass_ci(DEFAULT_BATCHES)?,
            density: set.merged.density_ci(DEFAULT_BATCHES)?,
            growth: growth_of_trace(&set.trace, config.thresholds.time_growth)?,
            events: set.events(),
        })
    };
    match config.execution {
        Execution::Serial => config.sizes.iter().map(one).collect(),
        Execution::Parallel => thread_pool().install(|| config.sizes.par_iter().map(one).collect()),
    }
}

/// Classifies `(p, q)` at the sizes and budget of `config`, seeding the
/// point's runs from `seed`.
pub fn classify_point(p: f64, q: f64, config: &ScanConfig, seed: u64) -> Result<PhaseVerdict, PhaseError> {
    config.validate()?;
    let params = Params::new(p, q)?;
    let mut verdict = PhaseVerdict {
        p,
        q,
        verdict: Verdict::Growing,
        basis: Basis::MassBalance,
        sizes: config.sizes.clone(),
        seed,
        evidence: Vec::new(),
        ratios: Vec::new(),
        events: 0,
        thresholds: config.thresholds,
    };
    if forced_growing(&params) {
        return Ok(verdict);
    }
    let mut t_end = config.budget.t_end;
    let mut round = 0;
    loop {
        let evidence = gather(params, config, seed, round, t_end)?;
        let spent: u64 = evidence.iter().map(|e| e.events).sum();
        verdict.events += spent;
        let (v, ratios) = decide(&evidence, &config.thresholds);
        verdict.evidence = evidence;
        verdict.ratios = ratios;
        verdict.verdict = v;
        if v != Verdict::Undecided {
            verdict.basis = Basis::FiniteSize;
            return Ok(verdict);
        }
        // The next round doubles the horizon and so roughly the event count.
        if verdict.events.saturating_add(spent.saturating_mul(2)) > config.budget.max_events {
            verdict.basis = Basis::BudgetExhausted;
            return Ok(verdict);
        }
        t_end *= 2.0;
        round += 1;
    }
}

/// Controls of the critical-point search at fixed `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Target width of the bracketing interval.
    pub tol: f64,
    /// Largest number of classified points.
    pub max_points: usize,
    /// The search gives up on finding an exponential endpoint beyond this `p`.
    pub p_search_max: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tol: 0.05,
            max_points: 24,
            p_search_max: 1_000.0,
        }
    }
}

/// One classified point of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub p: f64,
    pub verdict: Verdict,
    pub lean: Verdict,
    pub mean_masses: Vec<Option<f64>>,
    pub events: u64,
}

/// Bracket `[p_lo, p_hi]` of the critical `p` at fixed `q`: the verdict at
/// `p_lo` is Growing and the verdict at `p_hi` is Exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub q: f64,
    pub p_lo: f64,
    /// `None` when no exponential point was found up to the search limit.
    pub p_hi: Option<f64>,
    pub lo_verdict: Verdict,
    pub hi_verdict: Option<Verdict>,
    /// `q = 0`: every `p` is exponential and the bracket is `[0, 0]`.
    pub degenerate: bool,
    /// The bracket reached the target width.
    pub converged: bool,
    pub search: SearchConfig,
    pub points_used: usize,
    pub events: u64,
    pub probes: Vec<Probe>,
}

impl CriticalEstimate {
    pub fn width(&self) -> f64 {
        self.p_hi.map_or(f64::INFINITY, |hi| hi - self.p_lo)
    }

    pub fn overlaps(&self, other: &CriticalEstimate) -> bool {
        let hi_a = self.p_hi.unwrap_or(f64::INFINITY);
        let hi_b = other.p_hi.unwrap_or(f64::INFINITY);
        self.p_lo <= hi_b && other.p_lo <= hi_a
    }
}

struct Search<'a> {
    q: f64,
    config: &'a ScanConfig,
    seed: u64,
    probes: Vec<Probe>,
    events: u64,
}

impl Search<'_> {
    fn classify(&mut self, p: f64) -> Result<Verdict, PhaseError> {
        let index = self.probes.len() as u64;
        let v = classify_point(p, self.q, self.config, derive_seed(self.seed, index))?;
        self.events += v.events;
        self.probes.push(Probe {
            p,
            verdict: v.verdict,
            lean: v.lean(),
            mean_masses: v.mean_masses(),
            events: v.events,
        });
        Ok(v.verdict)
    }
}

/// Brackets the critical `p` at fixed `q` by an expanding search followed by
/// bisection.
///
/// `p = q` is Growing by mass balance and starts the bracket. Undecided
/// points never become endpoints: they split the bracket, and the next probe
/// goes into the gap their lean points at. The search stops at the target
/// width, when `max_points` points have been classified, or when both gaps
/// around the undecided zone are narrower than half the tolerance.
pub fn estimate_critical_p(q: f64, config: &ScanConfig, search: &SearchConfig) -> Result<CriticalEstimate, PhaseError> {
    config.validate()?;
    if !(q.is_finite() && q >= 0.0) {
        return Err(PhaseError::InvalidInput(format!(
            "q must be finite and non-negative, got {q}"
        )));
    }
    if search.tol.is_nan() || search.tol <= 0.0 {
        return Err(PhaseError::InvalidInput("tolerance must be positive".into()));
    }
    let mut est = CriticalEstimate {
        q,
        p_lo: 0.0,
        p_hi: Some(0.0),
        lo_verdict: Verdict::Exponential,
        hi_verdict: Some(Verdict::Exponential),
        degenerate: true,
        converged: true,
        search: *search,
        points_used: 0,
        events: 0,
        probes: Vec::new(),
    };
    if q == 0.0 {
        return Ok(est);
    }
    est.degenerate = false;
    est.converged = false;

    let mut s = Search {
        q,
        config,
        seed: derive_seed(config.seed, q.to_bits()),
        probes: Vec::new(),
        events: 0,
    };
    let mut lo = q;
    let lo_verdict = s.classify(lo)?;
    debug_assert_eq!(lo_verdict, Verdict::Growing);

    // Expand until an exponential endpoint turns up.
    let mut hi = None;
    let mut undecided: Vec<(f64, Verdict)> = Vec::new();
    let mut probe = 2.0 * q;
    while s.probes.len() < search.max_points && probe <= search.p_search_max {
        match s.classify(probe)? {
            Verdict::Exponential => {
                hi = Some(probe);
                break;
            }
            Verdict::Growing => {
                lo = probe;
                undecided.clear();
            }
            Verdict::Undecided => undecided.push((probe, s.probes.last().unwrap().lean)),
        }
        probe *= 2.0;
    }

    if let Some(mut hi_p) = hi {
        while hi_p - lo > search.tol && s.probes.len() < search.max_points {
            let next = if undecided.is_empty() {
                0.5 * (lo + hi_p)
            } else {
                let first = undecided.first().unwrap();
                let last = undecided.last().unwrap();
                let left_gap = first.0 - lo;
                let right_gap = hi_p - last.0;
                let min_gap = 0.5 * search.tol;
                let right = if last.1 == Verdict::Growing && right_gap > min_gap {
                    true
                } else if first.1 == Verdict::Exponential && left_gap > min_gap {
                    false
                } else if left_gap.max(right_gap) > min_gap {
                    right_gap >= left_gap
                } else {
                    break;
                };
                if right {
                    0.5 * (last.0 + hi_p)
                } else {
                    0.5 * (lo + first.0)
                }
            };
            match s.classify(next)? {
                Verdict::Growing => {
                    lo = next;
                    undecided.retain(|u| u.0 > next);
                }
                Verdict::Exponential => {
                    hi_p = next;
                    undecided.retain(|u| u.0 < next);
                }
                Verdict::Undecided => {
                    let lean = s.probes.last().unwrap().lean;
                    let at = undecided.partition_point(|u| u.0 < next);
                    undecided.insert(at, (next, lean));
                }
            }
        }
        est.p_hi = Some(hi_p);
        est.hi_verdict = Some(Verdict::Exponential);
        est.converged = hi_p - lo <= search.tol;
    } else {
        est.p_hi = None;
        est.hi_verdict = None;
    }
    est.p_lo = lo;
    est.lo_verdict = Verdict::Growing;
    est.points_used = s.probes.len();
    est.events = s.events;
    est.probes = s.probes;
    Ok(est)
}

/// One classified grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub p: f64,
    pub q: f64,
    pub verdict: Verdict,
    pub basis: Basis,
    pub seed: u64,
    /// Mean site mass per size (absent when no simulation was needed).
    pub mean_masses: Vec<Option<f64>>,
    /// Bracket of a critical search this row belongs to, if any.
    pub interval: Option<(f64, Option<f64>)>,
    pub events: u64,
}

impl ScanRow {
    pub fn from_verdict(v: &PhaseVerdict) -> Self {
        ScanRow {
            p: v.p,
            q: v.q,
            verdict: v.verdict,
            basis: v.basis,
            seed: v.seed,
            mean_masses: v.mean_masses(),
            interval: None,
            events: v.events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub dim: u32,
    pub sizes: Vec<u32>,
    pub seed: u64,
    pub budget: ClassifyBudget,
    pub thresholds: Thresholds,
    pub plan: RecordingPlan,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    pub fn empty(config: &ScanConfig) -> Self {
        ScanTable {
            dim: config.dim,
            sizes: config.sizes.clone(),
            seed: config.seed,
            budget: config.budget,
            thresholds: config.thresholds,
            plan: config.plan,
            rows: Vec::new(),
        }
    }
}

/// Seed of grid point `index` of a sweep.
pub fn point_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

/// Classifies every grid point; rows come back in grid order and depend only
/// on the inputs and the master seed.
pub fn sweep(grid: &[(f64, f64)], config: &ScanConfig) -> Result<ScanTable, PhaseError> {
    config.validate()?;
    let one = |(i, &(p, q)): (usize, &(f64, f64))| -> Result<ScanRow, PhaseError> {
        let v = classify_point(p, q, config, point_seed(config.seed, i))?;
        Ok(ScanRow::from_verdict(&v))
    };
    let rows: Vec<ScanRow> = match config.execution {
        Execution::Serial => grid.iter().enumerate().map(one).collect::<Result<_, _>>()?,
        Execution::Parallel => {
            thread_pool().install(|| grid.par_iter().enumerate().map(one).collect::<Result<_, _>>())?
        }
    };
    Ok(ScanTable {
        rows,
        ..ScanTable::empty(config)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evidence(side: u32, mean: f64, stderr: f64, growth: Growth) -> SizeEvidence {
        let est = BatchEstimate {
            mean,
            stderr,
            n_batches: 16,
        };
        SizeEvidence {
            side,
            t_end: 1.0,
            replicas: 1,
            seed: 0,
            mean_mass: est,
            density: est,
            growth: GrowthReport {
                verdict: growth,
                earlier: est,
                later: est,
                relative_change: Some(0.0),
                threshold: GROWTH_THRESHOLD,
            },
            events: 0,
        }
    }

    #[test]
    fn mass_balance_rule() {
        for (p, q) in [(1.0, 2.0), (1.0, 1.0), (0.0, 0.1)] {
            assert!(forced_growing(&Params::new(p, q).unwrap()));
        }
        for (p, q) in [(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)] {
            assert!(!forced_growing(&Params::new(p, q).unwrap()));
        }
    }

    #[test]
    fn flat_and_saturating_is_exponential() {
        let ev = [
            evidence(16, 0.110, 0.001, Growth::Saturating),
            evidence(32, 0.111, 0.001, Growth::Saturating),
            evidence(64, 0.109, 0.001, Growth::Saturating),
        ];
        assert_eq!(decide(&ev, &Thresholds::default()).0, Verdict::Exponential);
    }

    #[test]
    fn zero_mass_everywhere_is_flat() {
        let ev = [
            evidence(16, 0.0, 0.0, Growth::Saturating),
            evidence(32, 0.0, 0.0, Growth::Saturating),
        ];
        let (v, ratios) = decide(&ev, &Thresholds::default());
        assert_eq!(v, Verdict::Exponential);
        assert_eq!(ratios[0].ratio, 1.0);
    }

    #[test]
    fn imprecise_flatness_is_undecided() {
        let ev = [
            evidence(16, 1.0, 0.05, Growth::Saturating),
            evidence(32, 1.0, 0.05, Growth::Saturating),
        ];
        assert_eq!(decide(&ev, &Thresholds::default()).0, Verdict::Undecided);
    }

    #[test]
    fn growth_with_size_or_time_is_growing() {
        let t = Thresholds::default();
        let with_size = [
            evidence(16, 1.0, 0.01, Growth::Saturating),
            evidence(32, 2.0, 0.01, Growth::Undecided),
            evidence(64, 4.5, 0.01, Growth::Undecided),
        ];
        assert_eq!(decide(&with_size, &t).0, Verdict::Growing);
        let in_time = [
            evidence(16, 100.0, 1.0, Growth::Growing),
            evidence(32, 101.0, 1.0, Growth::Growing),
        ];
        assert_eq!(decide(&in_time, &t).0, Verdict::Growing);
        let mixed = [
            evidence(16, 100.0, 1.0, Growth::Growing),
            evidence(32, 101.0, 1.0, Growth::Undecided),
        ];
        assert_eq!(decide(&mixed, &t).0, Verdict::Undecided);
    }

    #[test]
    fn config_validation() {
        let mut c = ScanConfig::new(1, 0);
        assert!(c.validate().is_ok());
        c.sizes = vec![16];
        assert!(c.validate().is_err());
        c.sizes = vec![32, 16];
        assert!(c.validate().is_err());
        c.sizes = vec![1, 4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn forced_points_run_no_simulation() {
        let c = ScanConfig::new(1, 7);
        for (p, q) in [(1.0, 2.0), (0.0, 0.1), (0.5, 0.5)] {
            let v = classify_point(p, q, &c, 1).unwrap();
            assert_eq!(v.verdict, Verdict::Growing);
            assert_eq!(v.basis, Basis::MassBalance);
            assert_eq!(v.events, 0);
            assert!(v.evidence.is_empty());
        }
        assert!(classify_point(-1.0, 0.1, &c, 1).is_err());
    }

    #[test]
    fn degenerate_search_at_zero_deposition() {
        let c = ScanConfig::new(1, 7);
        let est = estimate_critical_p(0.0, &c, &SearchConfig::default()).unwrap();
        assert!(est.degenerate);
        assert_eq!((est.p_lo, est.p_hi), (0.0, Some(0.0)));
        assert!(estimate_critical_p(
            0.5,
            &c,
            &SearchConfig {
                tol: 0.0,
                ..SearchConfig::default()
            }
        )
        .is_err());
    }
}
