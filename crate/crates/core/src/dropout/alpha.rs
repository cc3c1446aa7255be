use rand::Rng;

use super::{ChannelScore, DropResult, DropoutError, Mode};
use crate::nn::Tensor;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Negative saturation value of SELU, `-lambda * alpha`.
pub const ALPHA_PRIME: f64 = -SELU_LAMBDA * SELU_ALPHA;

/// Affine `(a, b)` that restores zero mean and unit variance after
/// replacing a fraction `1 - keep` of units with [`ALPHA_PRIME`].
pub fn alpha_affine(p_drop: f64) -> (f64, f64) {
    let keep = 1.0 - p_drop;
    let a = (keep + ALPHA_PRIME * ALPHA_PRIME * keep * (1.0 - keep)).powf(-0.5);
    let b = -a * (1.0 - keep) * ALPHA_PRIME;
    (a, b)
}

/// Feature alpha dropout with one rate for every channel.
pub fn apply_fad<R: Rng + ?Sized>(x: &Tensor, p_eff: f64, mode: Mode, rng: &mut R) -> Result<DropResult, DropoutError> {
    if !(0.0..1.0).contains(&p_eff) {
        return Err(DropoutError::Rate(p_eff));
    }
    if mode == Mode::Eval || p_eff == 0.0 {
        return Ok(DropResult::identity(x));
    }
    Ok(channel_alpha(x, &vec![p_eff; x.channels], rng))
}

/// Weighted feature alpha dropout: channel selection from the activation
/// ratings, replacement and affine from feature alpha dropout, each channel
/// using its own rate.
pub fn apply_wfad<R: Rng + ?Sized>(
    x: &Tensor,
    scores: &ChannelScore,
    mode: Mode,
    rng: &mut R,
) -> Result<DropResult, DropoutError> {
    let rates = &scores.effective_rates;
    if rates.len() != x.channels {
        return Err(DropoutError::Shape(format!("{} rates for {} channels", rates.len(), x.channels)));
    }
    if let Some(&p) = rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(DropoutError::Rate(p));
    }
    if mode == Mode::Eval || rates.iter().all(|&p| p == 0.0) {
        return Ok(DropResult::identity(x));
    }
    Ok(channel_alpha(x, rates, rng))
}

/// One uniform draw per (channel, sample), channel-major.
fn channel_alpha<R: Rng + ?Sized>(x: &Tensor, rates: &[f64], rng: &mut R) -> DropResult {
    let (c, b, l) = x.shape();
    let mut out = x.clone();
    let mut scale = vec![0.0; x.data.len()];
    let mut dropped = vec![false; c * b];
    for ch in 0..c {
        let p = rates[ch];
        let (a, shift) = alpha_affine(p);
        for s in 0..b {
            let drop = p > 0.0 && rng.random::<f64>() < p;
            dropped[ch * b + s] = drop;
            let start = x.idx(ch, s, 0);
            let lane = &mut out.data[start..start + l];
            let g = &mut scale[start..start + l];
            if drop {
                lane.fill(a * ALPHA_PRIME + shift);
                g.fill(0.0);
            } else {
                lane.iter_mut().for_each(|v| *v = a * *v + shift);
                g.fill(a);
            }
        }
    }
    DropResult { output: out, grad_scale: Some(scale), dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let x = Tensor::new(2, 2, 2, vec![1.0, -2.0, 3.0, 0.5, 9.0, 7.0, -1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = apply_fad(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(r.output, x);
    }

    #[test]
    fn full_rate_rejected() {
        let x = Tensor::zeros(1, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_fad(&x, 1.0, Mode::Train, &mut rng), Err(DropoutError::Rate(1.0)));
    }

    #[test]
    fn eval_is_identity() {
        let x = Tensor::new(1, 1, 3, vec![1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_fad(&x, 0.5, Mode::Eval, &mut rng).unwrap().output, x);
    }

    #[test]
    fn affine_at_zero_is_identity() {
        assert_eq!(alpha_affine(0.0), (1.0, 0.0));
    }
}
