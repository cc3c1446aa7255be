mod common;

use common::{oracle_mape, oracle_r2, oracle_s_bar};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specdrop_core::metrics::{self, MetricSeries, Predictor};
use specdrop_core::sim::{generate_dataset, TaskVariant, VariantName};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn metrics_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
        let pred: Vec<f64> = target.iter().map(|t| t * rng.random_range(0.5..1.5) + rng.random_range(-0.1..0.1)).collect();
        let m = metrics::mape(&pred, &target).unwrap();
        let (mean, std) = oracle_mape(&pred, &target);
        assert!(close(m.mean, mean, 1e-10) && close(m.std, std, 1e-10));
        assert!(close(metrics::r_squared(&pred, &target).unwrap(), oracle_r2(&pred, &target), 1e-10));
        let len = rng.random_range(3..120);
        let curve: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..50.0)).collect();
        assert!(close(metrics::s_bar(&curve).unwrap(), oracle_s_bar(&curve), 1e-10));
    }
}

#[test]
fn s_bar_reference_values() {
    assert_eq!(metrics::s_bar(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap(), 4.0);
    for (a, b) in [(0.0, 1.0), (3.5, -0.25), (-2.0, 0.0)] {
        let line: Vec<f64> = (0..40).map(|k| a + b * k as f64).collect();
        assert_eq!(metrics::s_bar(&line).unwrap(), 0.0, "a {a} b {b}");
    }
}

#[test]
fn series_s_bar_equals_free_function() {
    let mut s = MetricSeries::new("mape/val");
    let vals = [30.0, 22.0, 19.0, 18.5, 18.0, 17.0];
    for (e, v) in vals.iter().enumerate() {
        s.push(e as u32 + 1, *v).unwrap();
    }
    assert_eq!(s.s_bar().unwrap(), metrics::s_bar(&vals).unwrap());
    assert!(s.push(3, 1.0).is_err());
}

#[test]
fn pearson_is_scale_free() {
    let t = [1.0, 2.0, 4.0, 3.0, 7.0];
    let p: Vec<f64> = t.iter().map(|x| 3.0 * x - 2.0).collect();
    assert!((metrics::pearson_r(&p, &t).unwrap() - 1.0).abs() < 1e-14);
    let neg: Vec<f64> = t.iter().map(|x| -x).collect();
    assert!((metrics::pearson_r(&neg, &t).unwrap() + 1.0).abs() < 1e-14);
    assert_eq!(metrics::pearson_r(&[2.0; 5], &t).unwrap(), 0.0);
}

struct Oracle {
    targets: Vec<f64>,
    scale: f64,
}

impl Predictor for Oracle {
    fn predict(&mut self, _: &[f32], n: usize) -> anyhow::Result<Vec<f64>> {
        assert_eq!(self.targets.len() % n, 0);
        Ok(self.targets.iter().map(|t| t * self.scale).collect())
    }
}

#[test]
fn report_uses_only_amplitude_columns() {
    let v = TaskVariant::new(VariantName::Standard14);
    let ds = generate_dataset(&v, 20, 2, 0.5).unwrap();
    let p = v.len();
    let rows = ds.val_indices();
    let targets: Vec<f64> = ds.targets[rows.start * p..rows.end * p].iter().map(|&x| x as f64).collect();
    let mut o = Oracle { targets, scale: 1.2 };
    let r = metrics::evaluate(&mut o, &ds, rows).unwrap();
    // Every amplitude is off by exactly 20 %, whatever the other columns do.
    assert!((r.mape - 20.0).abs() < 1e-9, "{}", r.mape);
    assert!(r.std < 1e-9);
    assert_eq!(r.per_metabolite.len(), v.amplitude_indices().len());
    assert_eq!(r.per_metabolite.iter().map(|m| m.name.clone()).collect::<Vec<_>>(), v.metabolite_names);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mape_scales_proportionally(t in prop::collection::vec(0.1f64..10.0, 2..50), k in 0.0f64..3.0) {
        let p: Vec<f64> = t.iter().map(|x| x * (1.0 + k)).collect();
        let m = metrics::mape(&p, &t).unwrap();
        prop_assert!((m.mean - 100.0 * k).abs() < 1e-9);
    }

    #[test]
    fn s_bar_is_shift_and_trend_invariant(
        c in prop::collection::vec(-10.0f64..10.0, 3..60), a in -5.0f64..5.0, b in -2.0f64..2.0
    ) {
        let shifted: Vec<f64> = c.iter().enumerate().map(|(k, v)| v + a + b * k as f64).collect();
        let s0 = metrics::s_bar(&c).unwrap();
        prop_assert!((metrics::s_bar(&shifted).unwrap() - s0).abs() <= 1e-9 * s0.max(1.0));
        prop_assert!(s0 >= 0.0);
    }

    #[test]
    fn r2_never_exceeds_one(t in prop::collection::vec(-5.0f64..5.0, 3..40), noise in 0.0f64..2.0) {
        prop_assume!(t.iter().any(|x| (x - t[0]).abs() > 1e-6));
        let p: Vec<f64> = t.iter().enumerate().map(|(i, x)| x + noise * ((i as f64).sin())).collect();
        prop_assert!(metrics::r_squared(&p, &t).unwrap() <= 1.0);
    }
}
