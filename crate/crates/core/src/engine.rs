//! Exact kinetic Monte Carlo for the lattice process.
//!
//! Rates are homogeneous inside each event class, so an event is drawn in two
//! stages: the class with probability proportional to its total rate
//! (`N`, `N p`, `S q`), then a uniform particle, neighbour slot or site inside
//! the class. Holding times are exponential with the total rate. Both stages
//! are O(1).

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{total_rate, Event, Geometry, LatticeState, ModelError, Params, Transition, HOP_RATE};
use crate::observables::{ObservablesError, PeriodSeries, Recorder, RecordingPlan, StatAccumulator};

/// Environment variable capping the worker threads used for replicas and sweeps.
pub const THREADS_ENV: &str = "CED_THREADS";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("simulation aborted at t = {time}: {source}")]
    Model {
        time: f64,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Observables(#[from] ObservablesError),
}

/// The random source used by every simulation.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `splitmix64(seed ^ splitmix64(tag))`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Seed of replica `k` derived from a master seed.
///
/// Replica 0 runs on the master seed itself, so a single replica reproduces a
/// plain [`run`]; replica `k > 0` uses [`derive_seed`]`(seed, k)`.
pub fn replica_seed(seed: u64, k: u64) -> u64 {
    if k == 0 {
        seed
    } else {
        derive_seed(seed, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub geom: Geometry,
    pub params: Params,
    pub t_end: f64,
    pub seed: u64,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSample {
    pub event: Event,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Event(EventSample),
    /// Total rate is zero: the empty lattice without deposition.
    Absorbed,
}

/// Samples the next transition out of `state` without applying it.
pub fn step<R: Rng + ?Sized>(state: &LatticeState, params: &Params, rng: &mut R) -> Step {
    let rate = total_rate(state, params);
    if rate <= 0.0 {
        return Step::Absorbed;
    }
    let e: f64 = rng.sample(Exp1);
    // Exp1 may return exactly zero; holding times must stay positive.
    let dt = (e / rate).max(f64::MIN_POSITIVE);
    let n = state.particle_count();
    let u = rng.random::<f64>() * rate;
    let hop_band = n as f64 * HOP_RATE;
    let evap_band = hop_band + n as f64 * params.p;
    let event = if u < hop_band {
        Event::Hop {
            site: state.occupied()[rng.random_range(0..n)],
            direction: rng.random_range(0..state.geometry().slots()),
        }
    } else if u < evap_band {
        Event::Evaporate {
            site: state.occupied()[rng.random_range(0..n)],
        }
    } else {
        Event::Deposit {
            site: rng.random_range(0..state.sites()),
        }
    };
    Step::Event(EventSample { event, dt })
}

/// Receives the trajectory as it unfolds.
///
/// `hold` is called once per holding interval with the state being left and
/// the time spent in it (clipped at `t_end`); `transition` after each applied
/// event with the sites it changed.
pub trait Observer {
    fn hold(&mut self, state: &LatticeState, t: f64, dt: f64);

    fn transition(&mut self, _state: &LatticeState, _event: &Event, _change: &Transition) {}
}

impl Observer for () {
    fn hold(&mut self, _: &LatticeState, _: f64, _: f64) {}
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn hold(&mut self, state: &LatticeState, t: f64, dt: f64) {
        (**self).hold(state, t, dt)
    }

    fn transition(&mut self, state: &LatticeState, event: &Event, change: &Transition) {
        (**self).transition(state, event, change)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn hold(&mut self, state: &LatticeState, t: f64, dt: f64) {
        self.0.hold(state, t, dt);
        self.1.hold(state, t, dt);
    }

    fn transition(&mut self, state: &LatticeState, event: &Event, change: &Transition) {
        self.0.transition(state, event, change);
        self.1.transition(state, event, change);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub seed: u64,
    pub hops: u64,
    pub evaporations: u64,
    pub deposits: u64,
    pub final_time: f64,
    /// Time at which the lattice became empty with `q = 0`.
    pub absorbed_at: Option<f64>,
    pub initial_total_mass: u64,
    pub final_total_mass: u64,
    pub final_particle_count: u64,
    pub max_site_mass: u64,
}

impl RunStats {
    pub fn events(&self) -> u64 {
        self.hops + self.evaporations + self.deposits
    }
}

/// Runs from the empty lattice with no observers.
pub fn run(config: &EngineConfig) -> Result<(LatticeState, RunStats), EngineError> {
    run_from(config, LatticeState::new(config.geom), &mut ())
}

/// Runs from `state` until `t_end`, reporting to `observer`.
///
/// The event that would fire after `t_end` is sampled but not applied; the
/// last holding interval is clipped at `t_end`.
pub fn run_from<O: Observer + ?Sized>(
    config: &EngineConfig,
    mut state: LatticeState,
    observer: &mut O,
) -> Result<(LatticeState, RunStats), EngineError> {
    config.validate()?;
    if state.geometry() != &config.geom {
        return Err(EngineError::InvalidConfig(
            "initial state does not match the configured geometry".into(),
        ));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut stats = RunStats {
        seed: config.seed,
        initial_total_mass: state.total_mass(),
        ..RunStats::default()
    };
    let mut t = 0.0;
    loop {
        match step(&state, &config.params, &mut rng) {
            Step::Absorbed => {
                stats.absorbed_at = Some(t);
                observer.hold(&state, t, config.t_end - t);
                t = config.t_end;
                break;
            }
            Step::Event(EventSample { event, dt }) => {
                if t + dt >= config.t_end {
                    observer.hold(&state, t, config.t_end - t);
                    t = config.t_end;
                    break;
                }
                observer.hold(&state, t, dt);
                t += dt;
                let change = state
                    .apply_event(event)
                    .map_err(|source| EngineError::Model { time: t, source })?;
                match event {
                    Event::Hop { .. } => stats.hops += 1,
                    Event::Evaporate { .. } => stats.evaporations += 1,
                    Event::Deposit { .. } => stats.deposits += 1,
                }
                observer.transition(&state, &event, &change);
            }
        }
    }
    stats.final_time = t;
    stats.final_total_mass = state.total_mass();
    stats.final_particle_count = state.particle_count() as u64;
    stats.max_site_mass = state.high_water();
    Ok((state, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    Serial,
    Parallel,
}

/// Shared worker pool, capped by [`THREADS_ENV`] when set.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to start worker pool")
    })
}

/// One replica's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub stats: RunStats,
    pub accumulator: StatAccumulator,
    pub trace: PeriodSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub runs: Vec<RunStats>,
    /// Post-burn-in statistics of all replicas, merged in replica order.
    pub merged: StatAccumulator,
    /// Whole-trajectory total-mass trace summed pointwise over replicas.
    pub trace: PeriodSeries,
}

impl ReplicaSet {
    pub fn events(&self) -> u64 {
        self.runs.iter().map(RunStats::events).sum()
    }
}

/// Runs one recorded replica from the empty lattice.
pub fn run_recorded(config: &EngineConfig, plan: &RecordingPlan) -> Result<ReplicaRun, EngineError> {
    let mut recorder = Recorder::new(config.geom, config.t_end, plan)?;
    let (_, stats) = run_from(config, LatticeState::new(config.geom), &mut recorder)?;
    let (accumulator, trace) = recorder.finish();
    Ok(ReplicaRun {
        stats,
        accumulator,
        trace,
    })
}

/// Runs `n_replicas` independent replicas seeded by [`replica_seed`] and merges
/// their statistics. The result does not depend on `execution`.
pub fn run_replicas(
    config: &EngineConfig,
    n_replicas: usize,
    plan: &RecordingPlan,
    execution: Execution,
) -> Result<ReplicaSet, EngineError> {
    if n_replicas == 0 {
        return Err(EngineError::InvalidConfig("at least one replica is required".into()));
    }
    let one = |k: usize| {
        let cfg = EngineConfig {
            seed: replica_seed(config.seed, k as u64),
            ..*config
        };
        run_recorded(&cfg, plan)
    };
    let runs: Vec<ReplicaRun> = match execution {
        Execution::Serial => (0..n_replicas).map(one).collect::<Result<_, _>>()?,
        Execution::Parallel => {
            thread_pool().install(|| (0..n_replicas).into_par_iter().map(one).collect::<Result<_, _>>())?
        }
    };
    let mut iter = runs.into_iter();
    let first = iter.next().expect("n_replicas >= 1");
    let mut merged = first.accumulator;
    let mut trace = first.trace;
    let mut stats = vec![first.stats];
    for r in iter {
        merged.merge(&r.accumulator)?;
        trace.merge(&r.trace)?;
        stats.push(r.stats);
    }
    Ok(ReplicaSet {
        runs: stats,
        merged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(d: u32, l: u32, p: f64, q: f64, t_end: f64, seed: u64) -> EngineConfig {
        EngineConfig {
            geom: Geometry::new(d, l).unwrap(),
            params: Params::new(p, q).unwrap(),
            t_end,
            seed,
        }
    }

    #[test]
    fn empty_lattice_only_deposits() {
        let geom = Geometry::new(1, 5).unwrap();
        let state = LatticeState::new(geom);
        let params = Params::new(3.0, 0.2).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            match step(&state, &params, &mut rng) {
                Step::Event(s) => {
                    assert!(matches!(s.event, Event::Deposit { .. }));
                    assert!(s.dt > 0.0);
                }
                Step::Absorbed => panic!("deposition keeps the rate positive"),
            }
        }
    }

    #[test]
    fn no_evaporation_without_p() {
        let geom = Geometry::new(1, 4).unwrap();
        let state = LatticeState::from_masses(geom, &[2, 0, 1, 5]).unwrap();
        let params = Params::new(0.0, 0.7).unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..10_000 {
            if let Step::Event(s) = step(&state, &params, &mut rng) {
                assert!(!matches!(s.event, Event::Evaporate { .. }));
            }
        }
    }

    #[test]
    fn absorbed_without_particles_or_deposition() {
        let state = LatticeState::new(Geometry::new(2, 4).unwrap());
        let params = Params::new(7.0, 0.0).unwrap();
        assert_eq!(step(&state, &params, &mut rng_from_seed(0)), Step::Absorbed);
        let (fin, stats) = run(&config(2, 4, 7.0, 0.0, 10.0, 0)).unwrap();
        assert!(fin.is_empty());
        assert_eq!(stats.events(), 0);
        assert_eq!(stats.absorbed_at, Some(0.0));
        assert_eq!(stats.final_time, 10.0);
    }

    #[test]
    fn pure_deposition_accounts_for_all_mass() {
        let (state, stats) = run(&config(1, 16, 0.0, 1.0, 100.0, 11)).unwrap();
        assert_eq!(stats.evaporations, 0);
        assert_eq!(state.total_mass(), stats.deposits);
        assert!(stats.deposits > 1000);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = config(2, 6, 1.3, 0.4, 200.0, 99);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        let c = run(&EngineConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn rejects_bad_horizon() {
        assert!(run(&config(1, 4, 1.0, 0.1, 0.0, 0)).is_err());
        assert!(run(&config(1, 4, 1.0, 0.1, f64::INFINITY, 0)).is_err());
    }

    #[test]
    fn replica_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|k| replica_seed(42, k)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(replica_seed(42, 0), 42);
        // SplitMix64 reference values for state increments of the golden gamma.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }
}
