//! Sampler statistics, accounting, determinism and replica handling.

use ced_core::engine::{
    rng_from_seed, run, run_from, run_recorded, run_replicas, step, EngineConfig, Execution, Observer, Step,
};
use ced_core::model::{Event, Geometry, LatticeState, Params, Transition};
use ced_core::observables::{RecordingPlan, StatAccumulator};
use ced_core::oracle::solve_lattice;

fn config(d: u32, l: u32, p: f64, q: f64, t_end: f64, seed: u64) -> EngineConfig {
    EngineConfig {
        geom: Geometry::new(d, l).unwrap(),
        params: Params::new(p, q).unwrap(),
        t_end,
        seed,
    }
}

/// Pearson statistic of `observed` against `expected` probabilities.
fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let e = e * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn class_frequencies_match_rates() {
    // N = 3, S = 4, p = 0.5, q = 0.25: R = 5.5.
    let geom = Geometry::new(1, 4).unwrap();
    let state = LatticeState::from_masses(geom, &[2, 0, 1, 1]).unwrap();
    let params = Params::new(0.5, 0.25).unwrap();
    let mut rng = rng_from_seed(2024);
    let draws = 1_000_000;
    let mut class = [0u64; 3];
    let mut deposit_site = [0u64; 4];
    let mut hop_dir = [0u64; 2];
    let mut dt_sum = 0.0;
    for _ in 0..draws {
        let Step::Event(s) = step(&state, &params, &mut rng) else {
            panic!("state is not absorbing")
        };
        dt_sum += s.dt;
        match s.event {
            Event::Hop { site, direction } => {
                assert!(state.mass(site) > 0);
                class[0] += 1;
                hop_dir[direction] += 1;
            }
            Event::Evaporate { site } => {
                assert!(state.mass(site) > 0);
                class[1] += 1;
            }
            Event::Deposit { site } => {
                class[2] += 1;
                deposit_site[site] += 1;
            }
        }
    }
    // Class test at 99% (2 degrees of freedom).
    let stat = chi_square(&class, &[3.0 / 5.5, 1.5 / 5.5, 1.0 / 5.5]);
    assert!(stat < 9.210, "class chi-square {stat}, counts {class:?}");
    // Within-class uniformity, 99.9% each so the family stays near 99%.
    let stat = chi_square(&deposit_site, &[0.25; 4]);
    assert!(stat < 16.266, "deposit-site chi-square {stat}");
    let stat = chi_square(&hop_dir, &[0.5; 2]);
    assert!(stat < 10.828, "hop-direction chi-square {stat}");
    // Holding times are Exp(R): mean 1/R, standard error (1/R)/sqrt(n).
    let mean = dt_sum / draws as f64;
    let se = (1.0 / 5.5) / (draws as f64).sqrt();
    assert!((mean - 1.0 / 5.5).abs() < 4.0 * se, "mean holding time {mean}");
}

/// Checks every applied event against the lattice rules.
#[derive(Default)]
struct Auditor {
    deposits: u64,
    evaporations: u64,
    events: u64,
    last_mass: Option<u64>,
}

impl Observer for Auditor {
    fn hold(&mut self, state: &LatticeState, _t: f64, dt: f64) {
        assert!(dt >= 0.0);
        self.last_mass = Some(state.total_mass());
    }

    fn transition(&mut self, state: &LatticeState, event: &Event, change: &Transition) {
        self.events += 1;
        state.check_invariants().unwrap();
        let mut sites: Vec<usize> = state.occupied().to_vec();
        sites.sort_unstable();
        sites.dedup();
        assert_eq!(sites.len(), state.particle_count(), "two particles share a site");
        let before = self.last_mass.unwrap();
        let delta = state.total_mass() as i64 - before as i64;
        match event {
            Event::Hop { .. } => assert_eq!(delta, 0),
            Event::Evaporate { .. } => {
                assert_eq!(delta, -1);
                self.evaporations += 1;
            }
            Event::Deposit { .. } => {
                assert_eq!(delta, 1);
                self.deposits += 1;
            }
        }
        let touched: i64 = change.changes().map(|c| c.after as i64 - c.before as i64).sum();
        assert_eq!(touched, delta);
    }
}

#[test]
fn exact_accounting_on_every_event() {
    let cases = [
        config(1, 16, 1.0, 0.3, 500.0, 1),
        config(1, 3, 2.0, 0.4, 500.0, 2),
        config(2, 6, 0.5, 0.4, 200.0, 3),
        config(3, 3, 0.2, 0.3, 100.0, 4),
        config(1, 16, 0.0, 1.0, 100.0, 5),
        config(1, 8, 1.0, 0.0, 100.0, 6),
    ];
    for cfg in cases {
        let start = LatticeState::from_masses(cfg.geom, &vec![1; cfg.geom.sites()]).unwrap();
        let mut audit = Auditor::default();
        let (end, stats) = run_from(&cfg, start, &mut audit).unwrap();
        assert_eq!(audit.events, stats.events());
        assert_eq!(audit.deposits, stats.deposits);
        assert_eq!(audit.evaporations, stats.evaporations);
        assert_eq!(
            stats.final_total_mass as i64 - stats.initial_total_mass as i64,
            stats.deposits as i64 - stats.evaporations as i64
        );
        assert_eq!(end.total_mass(), stats.final_total_mass);
    }
}

#[test]
fn pure_deposition_from_empty() {
    let (state, stats) = run(&config(1, 16, 0.0, 1.0, 100.0, 9)).unwrap();
    assert_eq!(stats.evaporations, 0);
    assert_eq!(state.total_mass(), stats.deposits);
}

#[test]
fn serial_and_parallel_replicas_agree() {
    let cfg = config(1, 32, 1.0, 0.3, 400.0, 77);
    let plan = RecordingPlan::default();
    let a = run_replicas(&cfg, 4, &plan, Execution::Serial).unwrap();
    let b = run_replicas(&cfg, 4, &plan, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let seeds: Vec<u64> = a.runs.iter().map(|r| r.seed).collect();
    let mut unique = seeds.clone();
    unique.dedup();
    assert_eq!(unique.len(), 4);
}

#[test]
fn one_replica_is_a_plain_run() {
    let cfg = config(1, 16, 1.0, 0.3, 300.0, 5);
    let plan = RecordingPlan::default();
    let set = run_replicas(&cfg, 1, &plan, Execution::Parallel).unwrap();
    let (_, stats) = run(&cfg).unwrap();
    assert_eq!(set.runs, vec![stats]);
    let single = run_recorded(&cfg, &plan).unwrap();
    assert_eq!(set.merged, single.accumulator);
    assert_eq!(set.trace, single.trace);
}

/// Post-burn-in statistics accumulated the slow way, one full pass per hold.
struct Direct {
    burn_in: f64,
    acc: StatAccumulator,
}

impl Observer for Direct {
    fn hold(&mut self, state: &LatticeState, t: f64, dt: f64) {
        let post = (t + dt - self.burn_in.max(t)).min(dt);
        if post > 0.0 {
            self.acc.record(state, post);
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn recorder_matches_direct_accumulation() {
    for (cfg, burn) in [
        (config(1, 16, 1.0, 0.3, 500.0, 3), 0.5),
        (config(2, 4, 0.3, 0.2, 300.0, 4), 0.0),
        (config(1, 8, 0.2, 0.5, 200.0, 5), 0.25),
    ] {
        let plan = RecordingPlan {
            burn_in_fraction: burn,
            ..RecordingPlan::default()
        };
        let fast = run_recorded(&cfg, &plan).unwrap().accumulator;
        let burn_in = burn * cfg.t_end;
        let mut direct = Direct {
            burn_in,
            acc: StatAccumulator::new(cfg.geom.sites(), (cfg.t_end - burn_in) / plan.series_points as f64),
        };
        run_from(&cfg, LatticeState::new(cfg.geom), &mut direct).unwrap();
        let slow = direct.acc;
        assert_eq!(fast.intervals(), slow.intervals());
        assert!(close(fast.elapsed(), slow.elapsed()));
        assert!(close(fast.mass_time(), slow.mass_time()));
        assert!(close(fast.count_time(), slow.count_time()));
        let (hf, hs) = (fast.histogram_weights(), slow.histogram_weights());
        assert_eq!(hf.len(), hs.len());
        for (m, (a, b)) in hf.iter().zip(hs).enumerate() {
            assert!(close(*a, *b), "bin {m}: {a} vs {b}");
        }
        let (sf, ss) = (fast.series().points(), slow.series().points());
        assert_eq!(sf.len(), ss.len());
        for (a, b) in sf.iter().zip(ss) {
            assert!(close(a.weight, b.weight) && close(a.mass, b.mass) && close(a.count, b.count));
        }
    }
}

#[test]
fn small_lattice_matches_oracle() {
    let cfg = config(1, 3, 2.0, 0.4, 1e5, 31);
    let plan = RecordingPlan {
        burn_in_fraction: 0.01,
        ..RecordingPlan::default()
    };
    let acc = run_recorded(&cfg, &plan).unwrap().accumulator;
    let hist = acc.mass_histogram().unwrap();
    let exact = solve_lattice(cfg.geom, &cfg.params, 30).unwrap();
    assert!(exact.is_reliable());
    let tv = hist.total_variation(&exact.site_marginal());
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn density_matches_mass_balance() {
    let cfg = config(1, 64, 1.0, 0.3, 2e4, 42);
    let set = run_replicas(&cfg, 8, &RecordingPlan::default(), Execution::Parallel).unwrap();
    let ci = set.merged.density_ci(16).unwrap();
    assert!((ci.mean - 0.3).abs() <= 3.0 * ci.stderr, "{ci:?}");
}

/// Time-averaged mass of each site.
struct PerSite {
    mass_time: Vec<f64>,
}

impl Observer for PerSite {
    fn hold(&mut self, state: &LatticeState, _t: f64, dt: f64) {
        for &s in state.occupied() {
            self.mass_time[s] += state.mass(s) as f64 * dt;
        }
    }
}

#[test]
fn site_means_are_uniform() {
    let (l, replicas, t_end) = (8usize, 16, 4000.0);
    let mut per_replica = Vec::new();
    for k in 0..replicas {
        let cfg = config(1, l as u32, 1.0, 0.3, t_end, 1000 + k);
        let mut obs = PerSite {
            mass_time: vec![0.0; l],
        };
        run_from(&cfg, LatticeState::new(cfg.geom), &mut obs).unwrap();
        per_replica.push(obs.mass_time.iter().map(|m| m / t_end).collect::<Vec<_>>());
    }
    let n = replicas as f64;
    let site_mean = |s: usize| per_replica.iter().map(|r| r[s]).sum::<f64>() / n;
    let overall = (0..l).map(site_mean).sum::<f64>() / l as f64;
    for s in 0..l {
        let m = site_mean(s);
        let var = per_replica.iter().map(|r| (r[s] - m).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((m - overall).abs() < 4.0 * se, "site {s}: {m} vs {overall} (se {se})");
    }
}
