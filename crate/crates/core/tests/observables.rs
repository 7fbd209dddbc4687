//! Estimator checks: merging, normalization, batch means, tail fits and the
//! growth diagnostic on simulated trajectories.

use ced_core::engine::{rng_from_seed, run_recorded, run_replicas, EngineConfig, Execution};
use ced_core::model::{Geometry, LatticeState, Params};
use ced_core::observables::{
    batch_means_ci, growth_of_trace, tail_fit_exponential, Growth, RecordingPlan, StatAccumulator, GROWTH_THRESHOLD,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn config(l: u32, p: f64, q: f64, t_end: f64, seed: u64) -> EngineConfig {
    EngineConfig {
        geom: Geometry::new(1, l).unwrap(),
        params: Params::new(p, q).unwrap(),
        t_end,
        seed,
    }
}

fn records() -> impl Strategy<Value = Vec<(Vec<u64>, f64)>> {
    prop::collection::vec((prop::collection::vec(0u64..6, 5), 0.0f64..3.0), 0..40)
}

fn accumulate(recs: &[(Vec<u64>, f64)]) -> StatAccumulator {
    let geom = Geometry::new(1, 5).unwrap();
    let mut acc = StatAccumulator::new(5, 0.75);
    for (masses, dt) in recs {
        acc.record(&LatticeState::from_masses(geom, masses).unwrap(), *dt);
    }
    acc
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn merge_equals_concatenation(recs in records(), split in 0usize..40) {
        let split = split.min(recs.len());
        let whole = accumulate(&recs);
        let mut merged = accumulate(&recs[..split]);
        merged.merge(&accumulate(&recs[split..])).unwrap();
        prop_assert_eq!(merged.intervals(), whole.intervals());
        prop_assert!(close(merged.elapsed(), whole.elapsed()));
        prop_assert!(close(merged.mass_time(), whole.mass_time()));
        prop_assert!(close(merged.count_time(), whole.count_time()));
        let (a, b) = (merged.histogram_weights(), whole.histogram_weights());
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            prop_assert!(close(*x, *y));
        }
    }

    #[test]
    fn merge_is_commutative(a in records(), b in records()) {
        let (x, y) = (accumulate(&a), accumulate(&b));
        let mut xy = x.clone();
        xy.merge(&y).unwrap();
        let mut yx = y.clone();
        yx.merge(&x).unwrap();
        prop_assert_eq!(xy, yx);
    }

    #[test]
    fn histogram_is_normalized(recs in records()) {
        let acc = accumulate(&recs);
        if let Ok(h) = acc.mass_histogram() {
            let total: f64 = h.probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(h.probs.iter().all(|&p| p >= 0.0));
            prop_assert!(h.weights.last().copied().unwrap_or(1.0) > 0.0 || h.weights.len() == 1);
        }
    }
}

#[test]
fn iid_normal_batch_error() {
    let mut rng = rng_from_seed(17);
    let n = 1usize << 14;
    let target = 1.0 / (n as f64).sqrt();
    // One draw of a 16-batch standard error scatters by about 18%; average
    // over independent series to test the estimator's scale.
    let reps = 64;
    let mut sum = 0.0;
    for _ in 0..reps {
        let series: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let est = batch_means_ci(&series, 16).unwrap();
        sum += est.stderr;
    }
    let mean_se = sum / reps as f64;
    assert!((mean_se / target - 1.0).abs() < 0.2, "stderr {mean_se} vs {target}");
}

#[test]
fn single_site_mean_and_tail() {
    let cfg = EngineConfig {
        geom: Geometry::new(1, 1).unwrap(),
        params: Params::new(2.0, 1.0).unwrap(),
        t_end: 4e5,
        seed: 8,
    };
    let run = run_recorded(&cfg, &RecordingPlan::default()).unwrap();
    let acc = run.accumulator;
    let ci = acc.mean_site_mass_ci(16).unwrap();
    assert!((ci.mean - 1.0).abs() < 4.0 * ci.stderr.max(1e-3), "{ci:?}");
    let fit = tail_fit_exponential(&acc.mass_histogram().unwrap(), 1, 10).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((fit.lambda - ln2).abs() < 3.0 * fit.lambda_stderr, "{fit:?}");
    assert!(fit.r_squared > 0.99);
}

#[test]
fn growth_without_deposition_saturates() {
    let set = run_replicas(
        &config(32, 1.0, 0.0, 500.0, 1),
        1,
        &RecordingPlan::default(),
        Execution::Serial,
    )
    .unwrap();
    let g = growth_of_trace(&set.trace, GROWTH_THRESHOLD).unwrap();
    assert_eq!(g.verdict, Growth::Saturating);
}

#[test]
fn growth_without_evaporation_is_detected() {
    let set = run_replicas(
        &config(32, 0.0, 0.5, 1000.0, 2),
        2,
        &RecordingPlan::default(),
        Execution::Serial,
    )
    .unwrap();
    let g = growth_of_trace(&set.trace, GROWTH_THRESHOLD).unwrap();
    assert_eq!(g.verdict, Growth::Growing, "{g:?}");
}

#[test]
fn deep_exponential_phase_saturates() {
    let set = run_replicas(
        &config(32, 2.0, 0.2, 2e4, 3),
        4,
        &RecordingPlan::default(),
        Execution::Parallel,
    )
    .unwrap();
    let g = growth_of_trace(&set.trace, GROWTH_THRESHOLD).unwrap();
    assert_eq!(g.verdict, Growth::Saturating, "{g:?}");
}
