//! Time-weighted stationary estimators.
//!
//! Continuous-time stationary expectations are time averages, so every
//! quantity here is an integral of an observable against the holding times of
//! the trajectory. Accumulators are mergeable; replicas are combined by
//! [`StatAccumulator::merge`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Observer;
use crate::model::{Event, Geometry, LatticeState, Transition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservablesError {
    #[error("accumulator holds no post-burn-in time")]
    EmptyAccumulator,
    #[error("cannot merge accumulators: {0}")]
    Incompatible(String),
    #[error("series of length {len} too short: {need} samples required")]
    SeriesTooShort { len: usize, need: usize },
    #[error("at least 2 batches are required, got {0}")]
    TooFewBatches(usize),
    #[error("invalid fit range [{lo}, {hi}]: {reason}")]
    InvalidRange { lo: usize, hi: usize, reason: String },
    #[error("histogram bin m = {0} is empty inside the fit range")]
    EmptyBin(usize),
    #[error("invalid recording plan: {0}")]
    InvalidPlan(String),
}

/// Time integrals over one recording period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Time covered.
    pub weight: f64,
    /// Integral of the total mass.
    pub mass: f64,
    /// Integral of the particle count.
    pub count: f64,
}

/// Fixed-period series of time integrals.
///
/// Merging adds points pointwise, so a merged series is the ensemble sum of
/// equally gridded trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSeries {
    period: f64,
    clock: f64,
    points: Vec<SeriesPoint>,
}

impl PeriodSeries {
    pub fn new(period: f64) -> Self {
        assert!(period > 0.0 && period.is_finite(), "period must be positive");
        PeriodSeries {
            period,
            clock: 0.0,
            points: Vec::new(),
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    /// Integrates constant `mass` and `count` over the next `dt` of time.
    pub fn advance(&mut self, dt: f64, mass: f64, count: f64) {
        let mut left = dt;
        while left > 0.0 {
            let idx = (self.clock / self.period) as usize;
            if self.points.len() <= idx {
                self.points.resize(idx + 1, SeriesPoint::default());
            }
            let boundary = (idx + 1) as f64 * self.period;
            let span = left.min(boundary - self.clock);
            // Rounding can leave the clock a hair below a boundary.
            let span = if span <= 0.0 {
                left.min(self.period * 1e-12)
            } else {
                span
            };
            let point = &mut self.points[idx];
            point.weight += span;
            point.mass += mass * span;
            point.count += count * span;
            self.clock += span;
            left -= span;
        }
    }

    pub fn merge(&mut self, other: &PeriodSeries) -> Result<(), ObservablesError> {
        if self.period != other.period {
            return Err(ObservablesError::Incompatible(format!(
                "series periods {} and {} differ",
                self.period, other.period
            )));
        }
        if self.points.len() < other.points.len() {
            self.points.resize(other.points.len(), SeriesPoint::default());
        }
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            a.weight += b.weight;
            a.mass += b.mass;
            a.count += b.count;
        }
        self.clock = self.clock.max(other.clock);
        Ok(())
    }

    /// Points covering (essentially) a full period's worth of weight.
    fn complete(&self) -> impl Iterator<Item = &SeriesPoint> {
        let full = self.points.iter().map(|p| p.weight).fold(0.0, f64::max);
        self.points
            .iter()
            .filter(move |p| p.weight >= full * (1.0 - 1e-9) && p.weight > 0.0)
    }

    /// Period averages of the total mass, complete periods only.
    pub fn mass_averages(&self) -> Vec<f64> {
        self.complete().map(|p| p.mass / p.weight).collect()
    }

    /// Period averages of the particle count, complete periods only.
    pub fn count_averages(&self) -> Vec<f64> {
        self.complete().map(|p| p.count / p.weight).collect()
    }
}

/// Time-integrated stationary statistics of a lattice trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatAccumulator {
    sites: usize,
    /// Number of recorded holding intervals.
    intervals: u64,
    elapsed: f64,
    mass_time: f64,
    count_time: f64,
    /// `histogram[m]`: integral of the number of sites holding mass `m`.
    histogram: Vec<f64>,
    series: PeriodSeries,
}

impl StatAccumulator {
    pub fn new(sites: usize, series_period: f64) -> Self {
        StatAccumulator {
            sites,
            intervals: 0,
            elapsed: 0.0,
            mass_time: 0.0,
            count_time: 0.0,
            histogram: Vec::new(),
            series: PeriodSeries::new(series_period),
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn intervals(&self) -> u64 {
        self.intervals
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn mass_time(&self) -> f64 {
        self.mass_time
    }

    pub fn count_time(&self) -> f64 {
        self.count_time
    }

    pub fn histogram_weights(&self) -> &[f64] {
        &self.histogram
    }

    pub fn series(&self) -> &PeriodSeries {
        &self.series
    }

    fn advance_scalars(&mut self, state: &LatticeState, dt: f64) {
        self.intervals += 1;
        self.elapsed += dt;
        let mass = state.total_mass() as f64;
        let count = state.particle_count() as f64;
        self.mass_time += mass * dt;
        self.count_time += count * dt;
        self.series.advance(dt, mass, count);
    }

    fn bin(&mut self, m: u64) -> &mut f64 {
        let m = m as usize;
        if self.histogram.len() <= m {
            self.histogram.resize(m + 1, 0.0);
        }
        &mut self.histogram[m]
    }

    /// Adds `state` held for `dt`. Direct O(N) form of what [`Recorder`]
    /// does incrementally.
    pub fn record(&mut self, state: &LatticeState, dt: f64) {
        debug_assert!(dt >= 0.0);
        debug_assert_eq!(state.sites(), self.sites);
        self.advance_scalars(state, dt);
        let empty = (state.sites() - state.particle_count()) as f64;
        *self.bin(0) += empty * dt;
        for &site in state.occupied() {
            *self.bin(state.mass(site)) += dt;
        }
    }

    /// Adds the statistics of another trajectory on the same lattice size.
    pub fn merge(&mut self, other: &StatAccumulator) -> Result<(), ObservablesError> {
        if self.sites != other.sites {
            return Err(ObservablesError::Incompatible(format!(
                "site counts {} and {} differ",
                self.sites, other.sites
            )));
        }
        self.series.merge(&other.series)?;
        self.intervals += other.intervals;
        self.elapsed += other.elapsed;
        self.mass_time += other.mass_time;
        self.count_time += other.count_time;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0.0);
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        Ok(())
    }

    fn site_time(&self) -> Result<f64, ObservablesError> {
        if self.elapsed > 0.0 {
            Ok(self.elapsed * self.sites as f64)
        } else {
            Err(ObservablesError::EmptyAccumulator)
        }
    }

    pub fn mean_site_mass(&self) -> Result<f64, ObservablesError> {
        Ok(self.mass_time / self.site_time()?)
    }

    /// Time-averaged fraction of occupied sites.
    pub fn occupied_density(&self) -> Result<f64, ObservablesError> {
        Ok(self.count_time / self.site_time()?)
    }

    pub fn mass_histogram(&self) -> Result<MassHistogram, ObservablesError> {
        self.site_time()?;
        Ok(MassHistogram::from_weights(self.histogram.clone()))
    }

    /// Batch-means estimate of the mean site mass over the series.
    pub fn mean_site_mass_ci(&self, n_batches: usize) -> Result<BatchEstimate, ObservablesError> {
        let s = self.sites as f64;
        let per_site: Vec<f64> = self.series.mass_averages().iter().map(|m| m / s).collect();
        batch_means_ci(&per_site, n_batches)
    }

    /// Batch-means estimate of the occupied density over the series.
    pub fn density_ci(&self, n_batches: usize) -> Result<BatchEstimate, ObservablesError> {
        let s = self.sites as f64;
        let per_site: Vec<f64> = self.series.count_averages().iter().map(|n| n / s).collect();
        batch_means_ci(&per_site, n_batches)
    }
}

/// Stationary site-mass law `P(m)`, `m = 0..=high_water`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassHistogram {
    /// Time-integrated site counts.
    pub weights: Vec<f64>,
    /// `weights` normalized to sum to one.
    pub probs: Vec<f64>,
}

impl MassHistogram {
    pub fn from_weights(mut weights: Vec<f64>) -> Self {
        while weights.len() > 1 && weights.last() == Some(&0.0) {
            weights.pop();
        }
        let total: f64 = weights.iter().sum();
        let probs = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; weights.len()]
        };
        MassHistogram { weights, probs }
    }

    /// From a normalized law; weights are taken equal to the probabilities.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        MassHistogram::from_weights(probs)
    }

    /// Largest mass with non-zero weight.
    pub fn high_water(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn prob(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }

    /// Total-variation distance to another law on the integers.
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        let n = self.probs.len().max(other.len());
        0.5 * (0..n)
            .map(|m| (self.prob(m) - other.get(m).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_batches: usize,
}

pub const DEFAULT_BATCHES: usize = 16;

/// Batch-means mean and standard error of a correlated series.
///
/// The series is cut into `n_batches` contiguous batches of equal length; a
/// leading remainder that does not fill a batch is dropped.
pub fn batch_means_ci(series: &[f64], n_batches: usize) -> Result<BatchEstimate, ObservablesError> {
    if n_batches < 2 {
        return Err(ObservablesError::TooFewBatches(n_batches));
    }
    if series.len() < 2 * n_batches {
        return Err(ObservablesError::SeriesTooShort {
            len: series.len(),
            need: 2 * n_batches,
        });
    }
    let size = series.len() / n_batches;
    let start = series.len() - size * n_batches;
    let means: Vec<f64> = series[start..]
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(BatchEstimate {
        mean,
        stderr: (var / k).sqrt(),
        n_batches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Decay rate per unit mass, `-d ln P / dm`.
    pub lambda: f64,
    pub intercept: f64,
    pub m_lo: usize,
    pub m_hi: usize,
    pub r_squared: f64,
    pub lambda_stderr: f64,
}

/// Weighted least-squares fit of `ln P(m) = intercept - lambda m` over
/// `m_lo..=m_hi`, each bin weighted by its time-integrated count.
pub fn tail_fit_exponential(hist: &MassHistogram, m_lo: usize, m_hi: usize) -> Result<TailFit, ObservablesError> {
    if m_hi < m_lo + 4 {
        return Err(ObservablesError::InvalidRange {
            lo: m_lo,
            hi: m_hi,
            reason: "at least 5 bins are required".into(),
        });
    }
    let mut pts = Vec::with_capacity(m_hi - m_lo + 1);
    for m in m_lo..=m_hi {
        let w = hist.weights.get(m).copied().unwrap_or(0.0);
        let p = hist.prob(m);
        if !(w > 0.0 && p > 0.0) {
            return Err(ObservablesError::EmptyBin(m));
        }
        pts.push((m as f64, p.ln(), w));
    }
    let sw: f64 = pts.iter().map(|t| t.2).sum();
    let xbar = pts.iter().map(|t| t.2 * t.0).sum::<f64>() / sw;
    let ybar = pts.iter().map(|t| t.2 * t.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|t| t.2 * (t.0 - xbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|t| t.2 * (t.0 - xbar) * (t.1 - ybar)).sum();
    let syy: f64 = pts.iter().map(|t| t.2 * (t.1 - ybar).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sse: f64 = pts.iter().map(|t| t.2 * (t.1 - intercept - slope * t.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    // Weights are relative; rescale so they sum to the number of bins.
    let n = pts.len() as f64;
    let sigma2 = sse / sw * n / (n - 2.0);
    let lambda_stderr = (sigma2 / (sxx / sw * n)).sqrt();
    Ok(TailFit {
        lambda: -slope,
        intercept,
        m_lo,
        m_hi,
        r_squared,
        lambda_stderr,
    })
}

/// Relative increase per half-window above which a significant rise counts
/// as growth.
pub const GROWTH_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    Saturating,
    Growing,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub verdict: Growth,
    pub earlier: BatchEstimate,
    pub later: BatchEstimate,
    /// `None` when the earlier mean is zero.
    pub relative_change: Option<f64>,
    pub threshold: f64,
}

/// Compares the last two half-windows (`window` samples each) of a
/// total-mass series.
///
/// Growing when the later mean exceeds the earlier by more than three
/// combined standard errors and by more than `threshold` relative to the
/// earlier mean; Saturating when the two agree within three standard errors.
pub fn growth_diagnostic(series: &[f64], window: usize, threshold: f64) -> Result<GrowthReport, ObservablesError> {
    if window < 4 {
        return Err(ObservablesError::InvalidRange {
            lo: 0,
            hi: window,
            reason: "a half-window needs at least 4 samples".into(),
        });
    }
    let need = 4 * window;
    if series.len() < need {
        return Err(ObservablesError::SeriesTooShort {
            len: series.len(),
            need,
        });
    }
    let n = series.len();
    let batches = (window / 2).min(DEFAULT_BATCHES);
    let earlier = batch_means_ci(&series[n - 2 * window..n - window], batches)?;
    let later = batch_means_ci(&series[n - window..], batches)?;
    let diff = later.mean - earlier.mean;
    let se = earlier.stderr.hypot(later.stderr);
    let relative_change = (earlier.mean.abs() > 0.0).then(|| diff / earlier.mean.abs());
    let verdict = if diff.abs() <= 3.0 * se {
        Growth::Saturating
    } else if diff > 0.0 && relative_change.is_none_or(|r| r > threshold) {
        Growth::Growing
    } else {
        Growth::Undecided
    };
    Ok(GrowthReport {
        verdict,
        earlier,
        later,
        relative_change,
        threshold,
    })
}

/// Growth diagnostic with the default window: a quarter of the series, so
/// the comparison covers its second half.
pub fn growth_of_trace(trace: &PeriodSeries, threshold: f64) -> Result<GrowthReport, ObservablesError> {
    let series = trace.mass_averages();
    growth_diagnostic(&series, series.len() / 4, threshold)
}

/// How a run is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordingPlan {
    /// Fraction of the horizon discarded before statistics start.
    pub burn_in_fraction: f64,
    /// Periods in the post-burn-in series of the accumulator.
    pub series_points: usize,
    /// Periods in the whole-trajectory total-mass trace.
    pub trace_points: usize,
}

impl Default for RecordingPlan {
    fn default() -> Self {
        RecordingPlan {
            burn_in_fraction: 0.5,
            series_points: 128,
            trace_points: 256,
        }
    }
}

impl RecordingPlan {
    pub fn validate(&self) -> Result<(), ObservablesError> {
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(ObservablesError::InvalidPlan(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if self.series_points == 0 || self.trace_points == 0 {
            return Err(ObservablesError::InvalidPlan("series lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-mass site counts integrated lazily: a bin is only brought up to date
/// when its count changes.
#[derive(Debug, Clone)]
struct LazyHistogram {
    counts: Vec<u64>,
    since: Vec<f64>,
}

impl LazyHistogram {
    fn from_state(state: &LatticeState) -> Self {
        let mut h = LazyHistogram {
            counts: Vec::new(),
            since: Vec::new(),
        };
        h.ensure(state.high_water() as usize);
        h.counts[0] = (state.sites() - state.particle_count()) as u64;
        for &site in state.occupied() {
            h.counts[state.mass(site) as usize] += 1;
        }
        h
    }

    fn ensure(&mut self, m: usize) {
        if self.counts.len() <= m {
            let len = (m + 1).max(2 * self.counts.len());
            self.counts.resize(len, 0);
            self.since.resize(len, 0.0);
        }
    }

    fn flush(&mut self, m: usize, clock: f64, into: &mut Vec<f64>) {
        let c = self.counts[m];
        if c > 0 {
            if into.len() <= m {
                into.resize(m + 1, 0.0);
            }
            into[m] += c as f64 * (clock - self.since[m]);
        }
        self.since[m] = clock;
    }

    fn shift(&mut self, before: u64, after: u64, clock: f64, into: &mut Vec<f64>) {
        let (b, a) = (before as usize, after as usize);
        self.ensure(a.max(b));
        self.flush(b, clock, into);
        self.flush(a, clock, into);
        self.counts[b] -= 1;
        self.counts[a] += 1;
    }

    fn flush_all(&mut self, clock: f64, into: &mut Vec<f64>) {
        for m in 0..self.counts.len() {
            self.flush(m, clock, into);
        }
    }
}

/// Engine observer feeding a post-burn-in [`StatAccumulator`] and a
/// whole-trajectory total-mass trace, in O(1) per event.
#[derive(Debug, Clone)]
pub struct Recorder {
    burn_in: f64,
    acc: StatAccumulator,
    trace: PeriodSeries,
    hist: Option<LazyHistogram>,
}

impl Recorder {
    pub fn new(geom: Geometry, t_end: f64, plan: &RecordingPlan) -> Result<Self, ObservablesError> {
        plan.validate()?;
        let burn_in = plan.burn_in_fraction * t_end;
        Ok(Recorder {
            burn_in,
            acc: StatAccumulator::new(geom.sites(), (t_end - burn_in) / plan.series_points as f64),
            trace: PeriodSeries::new(t_end / plan.trace_points as f64),
            hist: None,
        })
    }

    pub fn finish(mut self) -> (StatAccumulator, PeriodSeries) {
        if let Some(h) = self.hist.as_mut() {
            h.flush_all(self.acc.elapsed, &mut self.acc.histogram);
        }
        while self.acc.histogram.len() > 1 && self.acc.histogram.last() == Some(&0.0) {
            self.acc.histogram.pop();
        }
        (self.acc, self.trace)
    }
}

impl Observer for Recorder {
    fn hold(&mut self, state: &LatticeState, t: f64, dt: f64) {
        let mass = state.total_mass() as f64;
        let count = state.particle_count() as f64;
        self.trace.advance(dt, mass, count);
        let post = (t + dt - self.burn_in.max(t)).min(dt);
        if post > 0.0 {
            if self.hist.is_none() {
                self.hist = Some(LazyHistogram::from_state(state));
            }
            self.acc.advance_scalars(state, post);
        }
    }

    fn transition(&mut self, _state: &LatticeState, _event: &Event, change: &Transition) {
        if let Some(h) = self.hist.as_mut() {
            for c in change.changes() {
                h.shift(c.before, c.after, self.acc.elapsed, &mut self.acc.histogram);
            }
        }
    }
}
