use serde::{Deserialize, Serialize};

use super::DropoutError;
use crate::nn::Tensor;

/// Floor applied to channel mean magnitudes before the log.
pub const MEAN_FLOOR: f64 = 1e-12;

/// How `q` cuts the normalized scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Zero scores below the empirical `q`-quantile of all normalized scores.
    #[default]
    Quantile,
    /// Zero scores below `q` itself.
    Absolute,
}

/// Per-channel activation ratings and the resulting drop rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScore {
    /// Channel-wise mean over batch and length.
    pub raw_means: Vec<f64>,
    /// `log(|mean_c| / sum_i |mean_i|)`.
    pub s: Vec<f64>,
    /// Min-max normalized `s`, after thresholding.
    pub s_hat: Vec<f64>,
    /// `p_max * lambda_sched * s_hat`.
    pub effective_rates: Vec<f64>,
    /// Cut applied to the normalized scores.
    pub threshold: f64,
}

impl ChannelScore {
    /// Scores that carry explicit per-channel rates, bypassing the rating.
    pub fn from_rates(rates: Vec<f64>) -> Self {
        let n = rates.len();
        Self {
            raw_means: vec![0.0; n],
            s: vec![0.0; n],
            s_hat: vec![0.0; n],
            effective_rates: rates,
            threshold: 0.0,
        }
    }
}

/// Linear-interpolation quantile of `values` (the common "type 7" rule).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn score_channels(
    activations: &Tensor,
    q: f64,
    p_max: f64,
    lambda_sched: f64,
    mode: ThresholdMode,
) -> Result<ChannelScore, DropoutError> {
    let c = activations.channels;
    if c == 0 {
        return Err(DropoutError::Shape("no channels".into()));
    }
    if !activations.is_finite() {
        return Err(DropoutError::NonFinite);
    }
    let per = (activations.batch * activations.len) as f64;
    let raw_means: Vec<f64> = (0..c).map(|ch| activations.channel(ch).iter().sum::<f64>() / per).collect();
    if raw_means.iter().all(|&m| m == 0.0) {
        return Err(DropoutError::DegenerateActivations);
    }
    let mags: Vec<f64> = raw_means.iter().map(|m| m.abs().max(MEAN_FLOOR)).collect();
    let total: f64 = mags.iter().sum();
    let s: Vec<f64> = mags.iter().map(|m| (m / total).ln()).collect();
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut s_hat: Vec<f64> = if hi > lo { s.iter().map(|x| (x - lo) / (hi - lo)).collect() } else { vec![0.0; c] };
    let threshold = match mode {
        ThresholdMode::Quantile => quantile(&s_hat, q),
        ThresholdMode::Absolute => q,
    };
    for v in &mut s_hat {
        if *v < threshold {
            *v = 0.0;
        }
    }
    let effective_rates = s_hat.iter().map(|v| p_max * lambda_sched * v).collect();
    Ok(ChannelScore { raw_means, s, s_hat, effective_rates, threshold })
}
