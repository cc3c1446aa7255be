//! Straight-line oracles shared by the integration tests. Each one is written
//! from the defining formula without touching the optimized code paths.
#![allow(dead_code)]

use num_complex::Complex64;
use specdrop_core::sim::{ppm_axis, BasisSet, ParamRole, ParameterVector, TaskVariant};

/// Direct evaluation of the physics model on the output grid, noise free.
pub fn oracle_spectrum(p: &ParameterVector, v: &TaskVariant, basis: &BasisSet) -> Vec<f64> {
    let g = basis.grid;
    let role = |r: ParamRole| v.schema.iter().position(|e| e.role == r).map(|i| p.values[i]);
    let t2 = role(ParamRole::LorentzianGlobal);
    let gauss = role(ParamRole::GaussianGlobal).unwrap_or(0.0);
    let phi0 = role(ParamRole::Phase0).unwrap_or(0.0);
    let phi1 = role(ParamRole::Phase1).unwrap_or(0.0);
    // Time-domain model signal, summed over metabolites.
    let fid: Vec<Complex64> = (0..g.n_points)
        .map(|n| {
            let t = n as f64 * g.dwell;
            let mut s = Complex64::new(0.0, 0.0);
            for (m, f) in basis.functions.iter().enumerate() {
                let amp = v
                    .schema
                    .iter()
                    .position(|e| e.role == ParamRole::Amplitude && e.metabolite == Some(m))
                    .map(|i| p.values[i])
                    .unwrap();
                let d = v
                    .schema
                    .iter()
                    .position(|e| e.role == ParamRole::LorentzianPerMet && e.metabolite == Some(m))
                    .map(|i| p.values[i]);
                let lorentz = match d {
                    Some(d) => (-t * d).exp(),
                    None => (-t / t2.unwrap()).exp(),
                };
                s += f[n] * amp * lorentz * (-(t * gauss).powi(2)).exp();
            }
            s
        })
        .collect();
    let mut out = Vec::new();
    for ppm in ppm_axis() {
        let f = (ppm - g.ref_ppm) * g.mhz;
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, s) in fid.iter().enumerate() {
            let t = n as f64 * g.dwell;
            acc += s * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * t);
        }
        acc *= g.dwell * g.mhz;
        let phase = phi0 + phi1 * (ppm - g.ref_ppm);
        out.push((acc * Complex64::from_polar(1.0, -phase)).re);
    }
    let coeffs: Vec<f64> = v
        .schema
        .iter()
        .enumerate()
        .filter(|(_, e)| e.role == ParamRole::BaselineCoeff)
        .map(|(i, _)| p.values[i])
        .collect();
    for (slot, c) in coeffs.iter().enumerate() {
        let f = &basis.baseline_library[p.baseline_indices[slot]];
        for (o, b) in out.iter_mut().zip(f) {
            *o += c * b;
        }
    }
    out
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Population variance of second differences, by hand.
pub fn oracle_s_bar(m: &[f64]) -> f64 {
    let mut d = Vec::new();
    for k in 1..m.len() - 1 {
        d.push(m[k + 1] - 2.0 * m[k] + m[k - 1]);
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d.len() as f64
}

/// Mean and population std of 100 |p - t| / |t| over nonzero targets.
pub fn oracle_mape(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let mut ape = Vec::new();
    for i in 0..pred.len() {
        if target[i] != 0.0 {
            ape.push(100.0 * (pred[i] - target[i]).abs() / target[i].abs());
        }
    }
    let n = ape.len() as f64;
    let mean = ape.iter().sum::<f64>() / n;
    let var = ape.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Two-pass coefficient of determination pooled over all elements.
pub fn oracle_r2(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for i in 0..target.len() {
        ss_tot += (target[i] - mean) * (target[i] - mean);
        ss_res += (target[i] - pred[i]) * (target[i] - pred[i]);
    }
    1.0 - ss_res / ss_tot
}

/// Adaptive loss weight written out term by term.
pub fn oracle_lambda(r: f64, r2: f64, s_bar: f64, epoch: u32, pen_min: f64) -> f64 {
    let pen_epoch = epoch as f64 / 100.0;
    let value = ((1.0 - r) + (1.0 - r2) + s_bar) * (10.0 + pen_epoch);
    let floor = pen_min + pen_epoch + s_bar;
    if value > floor {
        value
    } else {
        floor
    }
}
