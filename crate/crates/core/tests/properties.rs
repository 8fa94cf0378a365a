use std::f64::consts::PI;
use std::sync::Arc;

use conic_core::boundary::{BoundaryGeometry, BoundaryPoint};
use conic_core::distance::{
    conic_sandwich_bounds, exact_simple_cone_distance, DistanceEngine, DistanceOptions, GridDiscretization,
};
use conic_core::metric::{cone_law, ChartPoint, ConicMetricSpec, MetricFamily};
use conic_core::quotient::conic_inversion;
use conic_core::scenario::{bundled, Scenario};
use proptest::prelude::*;

fn cone(circumference: f64) -> ConicMetricSpec {
    let b = Arc::new(BoundaryGeometry::circle(circumference).unwrap());
    ConicMetricSpec::new(b, 1.0, MetricFamily::constant()).unwrap()
}

fn point() -> impl Strategy<Value = ChartPoint> {
    (0.0..2.0 * PI, 0.0..=1.0f64).prop_map(|(t, r)| ChartPoint::polar(t, r))
}

proptest! {
    #[test]
    fn closed_form_is_a_metric(a in point(), b in point(), c in point()) {
        let s = cone(2.0 * PI);
        let d = |x: &ChartPoint, y: &ChartPoint| exact_simple_cone_distance(&s, x, y).unwrap();
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        prop_assert!(d(&a, &a) <= 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn closed_form_matches_the_plane(a in point(), b in point()) {
        let s = cone(2.0 * PI);
        let (ta, tb) = (a.y.angle().unwrap(), b.y.angle().unwrap());
        let plane = ((a.r * ta.cos() - b.r * tb.cos()).powi(2) + (a.r * ta.sin() - b.r * tb.sin()).powi(2)).sqrt();
        prop_assert!((exact_simple_cone_distance(&s, &a, &b).unwrap() - plane).abs() <= 1e-12);
    }

    #[test]
    fn closed_form_lies_in_the_sandwich(a in point(), b in point(), len in 0.5..=2.0 * PI) {
        let s = cone(len);
        let scale = len / (2.0 * PI);
        let a = ChartPoint::new(BoundaryPoint::Angle(a.y.angle().unwrap() * scale), a.r);
        let b = ChartPoint::new(BoundaryPoint::Angle(b.y.angle().unwrap() * scale), b.r);
        let d_n = BoundaryGeometry::circle(len).unwrap().distance(&a.y, &b.y).unwrap();
        let d = exact_simple_cone_distance(&s, &a, &b).unwrap();
        let bounds = conic_sandwich_bounds(&a, &b, d_n);
        prop_assert!(bounds.lower <= d + 1e-12 && d <= bounds.upper + 1e-12);
        prop_assert!((d - cone_law(a.r, b.r, d_n)).abs() <= 1e-12);
    }

    #[test]
    fn inversion_is_involutive(t in 0.0..2.0 * PI, r in 1e-6..1e6f64) {
        let x = ChartPoint::polar(t, r);
        let back = conic_inversion(&conic_inversion(&x).unwrap()).unwrap();
        prop_assert_eq!(&back.y, &x.y);
        prop_assert!((back.r - r).abs() <= 2.0 * f64::EPSILON * r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_distance_bounds_the_closed_form_from_above(a in point(), b in point()) {
        let s = cone(2.0 * PI);
        let engine = DistanceEngine::new(Arc::new(s.clone()), GridDiscretization::uniform(24, 32, 0.0, 1.0, true)).unwrap();
        let opts = DistanceOptions { use_exact: false, refine: false, ..Default::default() };
        let g = engine.distance(&a, &b, &opts).unwrap().value;
        let exact = exact_simple_cone_distance(&s, &a, &b).unwrap();
        prop_assert!(g >= exact - 1e-9, "graph {} below exact {}", g, exact);
        prop_assert!(g <= exact * 1.15 + 0.05);
    }
}

#[test]
fn bundled_scenarios_survive_a_toml_round_trip() {
    for (name, text) in bundled() {
        let s = Scenario::parse(text).unwrap();
        let again = Scenario::parse(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s.to_toml().unwrap(), again.to_toml().unwrap(), "{name}");
        again.validate().unwrap();
    }
}
