use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use specdrop_core::dropout::{
    alpha_affine, apply_dropcluster, apply_fad, apply_wfad, apply_wfd, fit_clusters, schedule_lambda, score_channels,
    ChannelScore, Cluster, ClusterConfig, ClusterMap, ClusterSelection, Mode, ScheduleState, ThresholdMode,
    ALPHA_PRIME,
};
use specdrop_core::nn::Tensor;

const RATES: [f64; 3] = [0.025, 0.05, 0.10];

fn gaussian(c: usize, b: usize, l: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(c, b, l, (0..c * b * l).map(|_| rng.sample(StandardNormal)).collect())
}

/// Channels filled with constant means, one sample-position per trial.
fn constant_channels(means: &[f64], b: usize, l: usize) -> Tensor {
    let mut t = Tensor::zeros(means.len(), b, l);
    for (c, &m) in means.iter().enumerate() {
        t.channel_mut(c).fill(m);
    }
    t
}

fn within_3_sigma(hits: usize, n: usize, p: f64) -> bool {
    let f = hits as f64 / n as f64;
    (f - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn fad_drop_frequency_matches_rate() {
    let n = 10_000;
    for (k, p) in RATES.into_iter().enumerate() {
        let x = gaussian(1, n, 4, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let r = apply_fad(&x, p, Mode::Train, &mut rng).unwrap();
        let hits = r.dropped.iter().filter(|&&d| d).count();
        assert!(within_3_sigma(hits, n, p), "p {p}: {hits}/{n}");
    }
}

#[test]
fn scored_techniques_follow_per_channel_rates() {
    let n = 10_000;
    // means 1, 2, 4, 8 give normalized ratings 0, 1/3, 2/3, 1; q = 0 keeps all.
    let x = constant_channels(&[1.0, 2.0, 4.0, 8.0], n, 1);
    for p in RATES {
        let s = score_channels(&x, 0.0, p, 1.0, ThresholdMode::Quantile).unwrap();
        let expect = [0.0, p / 3.0, 2.0 * p / 3.0, p];
        for (a, b) in s.effective_rates.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for wfad in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let r =
                if wfad { apply_wfad(&x, &s, Mode::Train, &mut rng) } else { apply_wfd(&x, &s, Mode::Train, &mut rng) }
                    .unwrap();
            for (c, &pc) in expect.iter().enumerate() {
                let hits = r.dropped[c * n..(c + 1) * n].iter().filter(|&&d| d).count();
                assert!(within_3_sigma(hits, n, pc), "wfad={wfad} p {p} channel {c}: {hits}/{n}");
            }
        }
    }
}

#[test]
fn cluster_drop_rate_scales_with_size() {
    let n = 10_000;
    let length = 16;
    let map = ClusterMap {
        length,
        clusters: vec![vec![Cluster { start: 0, len: 8 }, Cluster { start: 8, len: 4 }, Cluster { start: 12, len: 4 }]],
        frozen: Vec::new(),
    };
    let x = gaussian(1, n, length, 3);
    for p in RATES {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = apply_dropcluster(&x, &map, p, 1.0, ClusterSelection::Bernoulli, Mode::Train, &mut rng).unwrap();
        for (k, size) in [8usize, 4, 4].into_iter().enumerate() {
            let hits = (0..n).filter(|s| r.dropped[s * 3 + k]).count();
            let rate = p * size as f64 / length as f64;
            assert!(within_3_sigma(hits, n, rate), "p {p} cluster {k}: {hits}/{n} vs {rate}");
        }
    }
}

#[test]
fn alpha_variants_preserve_unit_moments() {
    let x = gaussian(1000, 100, 10, 5);
    let moments = |t: &Tensor| {
        let n = t.data.len() as f64;
        let m = t.data.iter().sum::<f64>() / n;
        (m, t.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
    };
    let (m0, v0) = moments(&x);
    for p in RATES {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (m, v) = moments(&apply_fad(&x, p, Mode::Train, &mut rng).unwrap().output);
        assert!((m - m0).abs() <= 0.02 && (v / v0 - 1.0).abs() <= 0.05, "FAD p {p}: mean {m} var {v}");
        let rates: Vec<f64> = (0..1000).map(|c| p * (c % 4) as f64 / 3.0).collect();
        let (m, v) = moments(&apply_wfad(&x, &ChannelScore::from_rates(rates), Mode::Train, &mut rng).unwrap().output);
        assert!((m - m0).abs() <= 0.02 && (v / v0 - 1.0).abs() <= 0.05, "wFAD p {p}: mean {m} var {v}");
    }
}

#[test]
fn alpha_affine_closed_form() {
    // Dropped units take a * alpha' + b, kept ones a * x + b; the pair must
    // restore zero mean and unit variance for unit-normal x.
    for p in [0.01, 0.1, 0.3, 0.7] {
        let (a, b) = alpha_affine(p);
        let q = 1.0 - p;
        let mean = q * b + p * (a * ALPHA_PRIME + b);
        let second = q * (a * a + b * b) + p * (a * ALPHA_PRIME + b).powi(2);
        assert!(mean.abs() < 1e-12, "p {p}: mean {mean}");
        assert!((second - mean * mean - 1.0).abs() < 1e-12, "p {p}: var {}", second - mean * mean);
    }
}

#[test]
fn uniform_weighting_reduces_wfad_to_fad() {
    let x = gaussian(6, 9, 5, 17);
    for p in RATES {
        let mut r1 = ChaCha8Rng::seed_from_u64(21);
        let mut r2 = ChaCha8Rng::seed_from_u64(21);
        let fad = apply_fad(&x, p, Mode::Train, &mut r1).unwrap();
        let wfad = apply_wfad(&x, &ChannelScore::from_rates(vec![p; 6]), Mode::Train, &mut r2).unwrap();
        assert_eq!(fad, wfad);
    }
}

#[test]
fn rating_worked_example() {
    // means 1, 2, 4, 8: s_c = ln(m_c / 15); min-max gives 0, 1/3, 2/3, 1;
    // the type-7 median of those is 1/2, so only the top two survive.
    let x = constant_channels(&[1.0, 2.0, 4.0, 8.0], 2, 3);
    let s = score_channels(&x, 0.5, 0.1, 0.5, ThresholdMode::Quantile).unwrap();
    for (a, m) in s.s.iter().zip([1.0f64, 2.0, 4.0, 8.0]) {
        assert!((a - (m / 15.0).ln()).abs() < 1e-15);
    }
    assert!((s.threshold - 0.5).abs() < 1e-15);
    let expect = [0.0, 0.0, 2.0 / 3.0, 1.0];
    for (a, b) in s.s_hat.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15, "{:?}", s.s_hat);
    }
    for (a, b) in s.effective_rates.iter().zip(expect) {
        assert!((a - 0.05 * b).abs() < 1e-15);
    }
}

#[test]
fn schedule_law() {
    for total in [11, 30, 100] {
        for e in 0..=total {
            let l = schedule_lambda(&ScheduleState::new(e, total, 10)).unwrap();
            let expect = if e <= 10 { 0.0 } else { (e - 10) as f64 / (total - 10) as f64 };
            assert_eq!(l, expect, "epoch {e} of {total}");
        }
        assert_eq!(schedule_lambda(&ScheduleState::new(total, total, 10)).unwrap(), 1.0);
    }
}

#[test]
fn eval_and_zero_schedule_are_identity() {
    let x = gaussian(4, 8, 16, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = score_channels(&x, 0.0, 0.1, 1.0, ThresholdMode::Quantile).unwrap();
    assert_eq!(apply_wfd(&x, &s, Mode::Eval, &mut rng).unwrap().output, x);
    assert_eq!(apply_wfad(&x, &s, Mode::Eval, &mut rng).unwrap().output, x);
    let map = fit_clusters(&x, &ClusterConfig::default()).unwrap();
    assert_eq!(apply_dropcluster(&x, &map, 0.1, 1.0, ClusterSelection::Bernoulli, Mode::Eval, &mut rng).unwrap().output, x);
    let before = rng.clone();
    assert_eq!(apply_dropcluster(&x, &map, 0.1, 0.0, ClusterSelection::Bernoulli, Mode::Train, &mut rng).unwrap().output, x);
    let zero = score_channels(&x, 0.0, 0.1, 0.0, ThresholdMode::Quantile).unwrap();
    assert_eq!(apply_wfad(&x, &zero, Mode::Train, &mut rng).unwrap().output, x);
    assert_eq!(rng, before, "identity paths must not draw");
}

#[test]
fn grad_scale_is_the_elementwise_derivative() {
    let x = gaussian(3, 5, 4, 29);
    let eps = 1e-6;
    type Op = fn(&Tensor, &mut ChaCha8Rng) -> specdrop_core::dropout::DropResult;
    let ops: [Op; 3] = [
        |x, r| apply_fad(x, 0.3, Mode::Train, r).unwrap(),
        |x, r| apply_wfd(x, &ChannelScore::from_rates(vec![0.2, 0.5, 0.0]), Mode::Train, r).unwrap(),
        |x, r| apply_wfad(x, &ChannelScore::from_rates(vec![0.2, 0.5, 0.1]), Mode::Train, r).unwrap(),
    ];
    for op in ops {
        let base = op(&x, &mut ChaCha8Rng::seed_from_u64(1));
        let g = base.grad_scale.clone().unwrap();
        for i in (0..x.data.len()).step_by(7) {
            let mut up = x.clone();
            up.data[i] += eps;
            let mut dn = x.clone();
            dn.data[i] -= eps;
            let d = (op(&up, &mut ChaCha8Rng::seed_from_u64(1)).output.data[i]
                - op(&dn, &mut ChaCha8Rng::seed_from_u64(1)).output.data[i])
                / (2.0 * eps);
            assert!((d - g[i]).abs() < 1e-8, "element {i}: {d} vs {}", g[i]);
        }
    }
}

#[test]
fn clusters_follow_correlated_blocks() {
    // Positions 0..6 share one random pattern across the batch, 6..16 another.
    let (b, l) = (32, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let u: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..b).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = Tensor::zeros(1, b, l);
    for s in 0..b {
        for pos in 0..l {
            let base = if pos < 6 { u[s] } else { v[s] };
            let i = x.idx(0, s, pos);
            x.data[i] = base * (1.0 + 0.01 * pos as f64);
        }
    }
    let m = fit_clusters(&x, &ClusterConfig::default()).unwrap();
    assert_eq!(m.clusters[0], vec![Cluster { start: 0, len: 6 }, Cluster { start: 6, len: 10 }]);
}

#[test]
fn frozen_selection_repeats_across_samples_and_calls() {
    let x = gaussian(2, 16, 12, 37);
    let mut map = fit_clusters(&x, &ClusterConfig { similarity_threshold: 2.0, min_batch: 8 }).unwrap();
    assert_eq!(map.counts(), vec![12, 12]);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    map.freeze(&mut rng);
    let a = apply_dropcluster(&x, &map, 1.0, 1.0, ClusterSelection::Frozen, Mode::Train, &mut rng).unwrap();
    let b = apply_dropcluster(&x, &map, 1.0, 1.0, ClusterSelection::Frozen, Mode::Train, &mut rng).unwrap();
    assert_eq!(a.dropped, b.dropped);
    for ch in 0..2 {
        let per_sample: Vec<&[bool]> = a.dropped[ch * 16 * 12..(ch + 1) * 16 * 12].chunks(12).collect();
        assert!(per_sample.windows(2).all(|w| w[0] == w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clusters_partition_each_channel(seed in 0u64..1000, l in 1usize..40, t in -0.5f64..1.0) {
        let x = gaussian(3, 8, l, seed);
        let m = fit_clusters(&x, &ClusterConfig { similarity_threshold: t, min_batch: 8 }).unwrap();
        for cs in &m.clusters {
            let mut at = 0;
            for c in cs {
                prop_assert_eq!(c.start, at);
                prop_assert!(c.len >= 1);
                at += c.len;
            }
            prop_assert_eq!(at, l);
        }
    }

    #[test]
    fn rates_stay_within_budget(seed in 0u64..1000, p in 0.0f64..0.1, lam in 0.0f64..1.0, q in 0.0f64..1.0) {
        let x = gaussian(8, 4, 6, seed);
        let s = score_channels(&x, q, p, lam, ThresholdMode::Quantile).unwrap();
        prop_assert!(s.effective_rates.iter().all(|&r| (0.0..=p * lam + 1e-15).contains(&r)));
        prop_assert!(s.s_hat.contains(&1.0) || s.s_hat.iter().all(|&v| v == 0.0));
    }
}
