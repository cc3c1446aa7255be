use rand::Rng;

use super::{ChannelScore, DropResult, DropoutError, Mode};
use crate::nn::Tensor;

/// Weighted feature dropout: zero channel `c` of each sample with
/// probability `p_eff[c]`, scaling survivors by `1 / (1 - p_eff[c])`.
pub fn apply_wfd<R: Rng + ?Sized>(
    x: &Tensor,
    scores: &ChannelScore,
    mode: Mode,
    rng: &mut R,
) -> Result<DropResult, DropoutError> {
    let rates = &scores.effective_rates;
    if rates.len() != x.channels {
        return Err(DropoutError::Shape(format!("{} rates for {} channels", rates.len(), x.channels)));
    }
    if let Some(&p) = rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(DropoutError::Rate(p));
    }
    if mode == Mode::Eval || rates.iter().all(|&p| p == 0.0) {
        return Ok(DropResult::identity(x));
    }
    let (c, b, l) = x.shape();
    let mut out = x.clone();
    let mut scale = vec![1.0; x.data.len()];
    let mut dropped = vec![false; c * b];
    for ch in 0..c {
        let p = rates[ch];
        if p == 0.0 {
            continue;
        }
        let keep_scale = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
        for s in 0..b {
            let drop = rng.random::<f64>() < p;
            dropped[ch * b + s] = drop;
            let start = x.idx(ch, s, 0);
            let k = if drop { 0.0 } else { keep_scale };
            out.data[start..start + l].iter_mut().for_each(|v| *v *= k);
            scale[start..start + l].fill(k);
        }
    }
    Ok(DropResult { output: out, grad_scale: Some(scale), dropped })
}
