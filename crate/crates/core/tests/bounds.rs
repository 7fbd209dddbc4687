use ced_core::phase::bounds::{evaluate_bounds, BoundsEntry, BoundsRegistry, CurveKind, Orientation};
use proptest::prelude::*;

fn entry(name: &str, kind: CurveKind, orientation: Orientation, expression: String) -> BoundsEntry {
    BoundsEntry {
        name: name.into(),
        kind,
        orientation,
        expression,
        domain_min: None,
        domain_max: None,
        provenance: "test".into(),
    }
}

proptest! {
    #[test]
    fn linear_pair_is_ordered(a in 0.1f64..5.0, gap in 0.01f64..5.0, q in 0.0f64..10.0) {
        let b = a + gap;
        let reg = BoundsRegistry::new(vec![
            entry("lo", CurveKind::Lower, Orientation::POfQ, format!("{a} * q")),
            entry("hi", CurveKind::Upper, Orientation::POfQ, format!("{b} * q")),
        ])
        .unwrap();
        let ev = evaluate_bounds(&reg, q);
        prop_assert!(ev.ordered);
        let (lo, hi) = ev.window();
        prop_assert!((lo.unwrap() - a * q).abs() <= 1e-12 * (1.0 + a * q));
        prop_assert!(lo.unwrap() <= hi.unwrap());
    }

    #[test]
    fn inverted_curve_matches_explicit_form(c in 0.5f64..20.0, q in 0.01f64..10.0) {
        let reg = BoundsRegistry::new(vec![
            entry("explicit", CurveKind::Asymptotic, Orientation::POfQ, format!("{c} * q")),
            entry("inverse", CurveKind::Asymptotic, Orientation::QOfP, format!("p / {c}")),
        ])
        .unwrap();
        let ev = evaluate_bounds(&reg, q);
        prop_assert_eq!(ev.values.len(), 2);
        let (x, y) = (ev.values[0].p, ev.values[1].p);
        prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0), "{} vs {}", x, y);
    }
}
