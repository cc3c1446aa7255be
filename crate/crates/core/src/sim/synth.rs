//! Spectrum synthesis: modulated basis functions, lineshape, phase,
//! baseline and noise, evaluated directly on the 512-point crop grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::basis::{ppm_axis, BasisSet};
use super::variant::{ParamRole, TaskVariant, VariantName, BASELINES_PER_SPECTRUM};
use super::{SimError, OUTPUT_LEN};

/// Size of the built-in baseline library.
pub const DEFAULT_LIBRARY_SIZE: usize = 16;

/// Ground-truth parameters of one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub variant: VariantName,
    pub values: Vec<f64>,
    /// Library entries the baseline coefficients multiply, one per coefficient slot.
    #[serde(default)]
    pub baseline_indices: Vec<usize>,
}

impl ParameterVector {
    pub fn get(&self, variant: &TaskVariant, role: ParamRole) -> Option<f64> {
        variant.index_of_role(role).map(|i| self.values[i])
    }
}

/// Deterministic per-sample generator: stream `index` of the ChaCha8 family
/// keyed by `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws every schema entry uniformly within its bounds.
pub fn sample_parameters(variant: &TaskVariant, rng_seed: u64) -> ParameterVector {
    sample_parameters_with(variant, DEFAULT_LIBRARY_SIZE, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

pub fn sample_parameters_with<R: Rng + ?Sized>(
    variant: &TaskVariant,
    library_size: usize,
    rng: &mut R,
) -> ParameterVector {
    let values = variant
        .schema
        .iter()
        .map(|e| {
            let u: f64 = rng.random();
            match e.role {
                // (lo, hi] keeps amplitudes strictly positive with the default lo = 0.
                ParamRole::Amplitude => e.bounds.hi - u * e.bounds.width(),
                _ => e.bounds.lo + u * e.bounds.width(),
            }
        })
        .collect();
    let baseline_indices = if variant.has_baseline() {
        sample_indices(rng, library_size, BASELINES_PER_SPECTRUM).into_vec()
    } else {
        Vec::new()
    };
    ParameterVector { variant: variant.name, values, baseline_indices }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Off,
    Seed(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub signal: Vec<f64>,
    pub ppm_axis: Vec<f64>,
    pub params: ParameterVector,
    pub clean_signal: Option<Vec<f64>>,
    /// Noise standard deviation applied in the frequency domain.
    pub noise_sigma: f64,
}

impl Spectrum {
    /// Peak of the clean real spectrum over the noise standard deviation
    /// measured from the added noise.
    pub fn measured_snr(&self) -> Option<f64> {
        let clean = self.clean_signal.as_ref()?;
        let peak = clean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let noise: Vec<f64> = self.signal.iter().zip(clean).map(|(s, c)| s - c).collect();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let var = noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64;
        Some(peak / var.sqrt())
    }
}

/// Reusable synthesis engine. Holds the Fourier kernel from the time grid to
/// the 512 crop frequencies, so the transform and resampling happen in one
/// band-limited evaluation.
pub struct Synthesizer {
    variant: TaskVariant,
    basis: BasisSet,
    ppm: Vec<f64>,
    /// cos(2 pi f_j t_n), row-major [OUTPUT_LEN, n_points].
    cos: Vec<f64>,
    /// sin(2 pi f_j t_n), same layout.
    sin: Vec<f64>,
    scale: f64,
    /// Sample times in seconds.
    times: Vec<f64>,
}

/// Spectra produced per matrix product.
const CHUNK: usize = 64;

impl Synthesizer {
    pub fn new(variant: &TaskVariant, basis: &BasisSet) -> Result<Self, SimError> {
        basis.validate()?;
        variant.validate()?;
        if basis.names != variant.metabolite_names {
            return Err(SimError::Mismatch(format!(
                "basis metabolites {:?} do not match variant {}",
                basis.names, variant.name
            )));
        }
        let g = basis.grid;
        let ppm = ppm_axis();
        let n = g.n_points;
        let mut cos = vec![0.0; OUTPUT_LEN * n];
        let mut sin = vec![0.0; OUTPUT_LEN * n];
        for (j, &p) in ppm.iter().enumerate() {
            let f = g.hz(p);
            for k in 0..n {
                // Reduce the phase modulo one cycle before the trig call.
                let cycles = (f * g.dwell * k as f64).rem_euclid(1.0);
                let (s, c) = (2.0 * PI * cycles).sin_cos();
                cos[j * n + k] = c;
                sin[j * n + k] = s;
            }
        }
        Ok(Self {
            variant: variant.clone(),
            basis: basis.clone(),
            ppm,
            cos,
            sin,
            scale: g.dwell * g.mhz,
            times: (0..n).map(|k| g.time(k)).collect(),
        })
    }

    pub fn variant(&self) -> &TaskVariant {
        &self.variant
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn synthesize(&self, params: &ParameterVector, noise: Noise) -> Result<Spectrum, SimError> {
        Ok(self.synthesize_batch(std::slice::from_ref(params), &[noise])?.remove(0))
    }

    /// Synthesizes many spectra; `noise` is either one entry per spectrum or
    /// a single entry applied to all.
    pub fn synthesize_batch(&self, params: &[ParameterVector], noise: &[Noise]) -> Result<Vec<Spectrum>, SimError> {
        if noise.len() != params.len() && noise.len() != 1 {
            return Err(SimError::Mismatch("noise spec count".into()));
        }
        let mut out = Vec::with_capacity(params.len());
        for (c, chunk) in params.chunks(CHUNK).enumerate() {
            let noises: Vec<Noise> = (0..chunk.len())
                .map(|i| if noise.len() == 1 { noise[0] } else { noise[c * CHUNK + i] })
                .collect();
            out.extend(self.synthesize_chunk(chunk, &noises)?);
        }
        Ok(out)
    }

    fn check(&self, p: &ParameterVector) -> Result<(), SimError> {
        if p.variant != self.variant.name || p.values.len() != self.variant.len() {
            return Err(SimError::Mismatch(format!(
                "parameters for {} ({} values) given to a {} synthesizer",
                p.variant,
                p.values.len(),
                self.variant.name
            )));
        }
        if self.variant.has_baseline() {
            if p.baseline_indices.len() != BASELINES_PER_SPECTRUM {
                return Err(SimError::Mismatch("baseline selection must have 5 entries".into()));
            }
            if p.baseline_indices.iter().any(|&i| i >= self.basis.baseline_library.len()) {
                return Err(SimError::Mismatch("baseline index outside the library".into()));
            }
        }
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("parameter vector"));
        }
        Ok(())
    }

    /// Time-domain signal before phase: amplitudes, lineshapes, no noise.
    fn fid(&self, p: &ParameterVector, re: &mut [f64], im: &mut [f64]) {
        let v = &self.variant;
        let vals = &p.values;
        let amp_idx = v.amplitude_indices();
        let t2 = v.index_of_role(ParamRole::LorentzianGlobal).map(|i| vals[i]);
        let gauss = v.index_of_role(ParamRole::GaussianGlobal).map(|i| vals[i]);
        let per_met: Vec<Option<f64>> = (0..v.metabolite_names.len())
            .map(|m| {
                v.schema
                    .iter()
                    .position(|e| e.role == ParamRole::LorentzianPerMet && e.metabolite == Some(m))
                    .map(|i| vals[i])
            })
            .collect();
        re.fill(0.0);
        im.fill(0.0);
        for (m, &ai) in amp_idx.iter().enumerate() {
            let a = vals[ai];
            let f = &self.basis.functions[m];
            let rate = match (per_met[m], t2) {
                (Some(d), _) => d,
                (None, Some(t2)) => 1.0 / t2,
                (None, None) => 0.0,
            };
            for (k, &t) in self.times.iter().enumerate() {
                let mut env = (-t * rate).exp();
                if let Some(g) = gauss {
                    env *= (-(t * g) * (t * g)).exp();
                }
                let w = a * env;
                re[k] += w * f[k].re;
                im[k] += w * f[k].im;
            }
        }
    }

    fn synthesize_chunk(&self, params: &[ParameterVector], noise: &[Noise]) -> Result<Vec<Spectrum>, SimError> {
        for p in params {
            self.check(p)?;
        }
        let n = self.basis.grid.n_points;
        let b = params.len();
        // Column-major in the batch: [n, b] with row stride b.
        let mut tre = vec![0.0; n * b];
        let mut tim = vec![0.0; n * b];
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for (s, p) in params.iter().enumerate() {
            self.fid(p, &mut re, &mut im);
            for k in 0..n {
                tre[k * b + s] = re[k];
                tim[k * b + s] = im[k];
            }
        }
        let (fre, fim) = self.transform(&tre, &tim, b);

        let v = &self.variant;
        let phase0 = v.index_of_role(ParamRole::Phase0);
        let phase1 = v.index_of_role(ParamRole::Phase1);
        let snr_idx = v.index_of_role(ParamRole::Snr);
        let baseline_idx = v.indices_of(|r| r == ParamRole::BaselineCoeff);
        let ref_ppm = self.basis.grid.ref_ppm;

        let mut spectra = Vec::with_capacity(b);
        let mut sigmas = vec![0.0; b];
        for (s, p) in params.iter().enumerate() {
            let p0 = phase0.map_or(0.0, |i| p.values[i]);
            let p1 = phase1.map_or(0.0, |i| p.values[i]);
            let mut metab = vec![0.0; OUTPUT_LEN];
            for j in 0..OUTPUT_LEN {
                let z = Complex64::new(fre[j * b + s], fim[j * b + s]) * self.scale;
                let phi = p0 + p1 * (self.ppm[j] - ref_ppm);
                metab[j] = (z * Complex64::from_polar(1.0, -phi)).re;
            }
            let mut clean = metab;
            for (slot, &ci) in baseline_idx.iter().enumerate() {
                let coeff = p.values[ci];
                let f = &self.basis.baseline_library[p.baseline_indices[slot]];
                clean.iter_mut().zip(f).for_each(|(c, v)| *c += coeff * v);
            }
            if clean.iter().any(|x| !x.is_finite()) {
                return Err(SimError::NonFinite("clean spectrum"));
            }
            if let Some(i) = snr_idx {
                let peak = clean.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                sigmas[s] = peak / p.values[i];
            }
            spectra.push(Spectrum {
                signal: clean.clone(),
                ppm_axis: self.ppm.clone(),
                params: p.clone(),
                clean_signal: Some(clean),
                noise_sigma: 0.0,
            });
        }

        if noise.iter().any(|x| matches!(x, Noise::Seed(_))) {
            // Complex white noise in time; its transform has real-part
            // standard deviation scale * sqrt(n) * sigma_t at every frequency.
            let norm = self.scale * (n as f64).sqrt();
            tre.fill(0.0);
            tim.fill(0.0);
            for (s, nz) in noise.iter().enumerate() {
                if let Noise::Seed(seed) = *nz {
                    let sigma_t = sigmas[s] / norm;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for k in 0..n {
                        let a: f64 = rng.sample(StandardNormal);
                        let c: f64 = rng.sample(StandardNormal);
                        tre[k * b + s] = a * sigma_t;
                        tim[k * b + s] = c * sigma_t;
                    }
                }
            }
            let (nre, _) = self.transform(&tre, &tim, b);
            for (s, nz) in noise.iter().enumerate() {
                if matches!(nz, Noise::Seed(_)) {
                    let sp = &mut spectra[s];
                    sp.noise_sigma = sigmas[s];
                    for j in 0..OUTPUT_LEN {
                        sp.signal[j] += self.scale * nre[j * b + s];
                    }
                }
            }
        }
        Ok(spectra)
    }

    /// Real and imaginary parts of sum_n x_n exp(-2 pi i f_j t_n) for a
    /// batch of `b` columns.
    fn transform(&self, xre: &[f64], xim: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.basis.grid.n_points;
        let mut fre = vec![0.0; OUTPUT_LEN * b];
        let mut fim = vec![0.0; OUTPUT_LEN * b];
        // Re F = C Re x + S Im x ;  Im F = C Im x - S Re x
        gemm(OUTPUT_LEN, n, b, 1.0, &self.cos, xre, 0.0, &mut fre);
        gemm(OUTPUT_LEN, n, b, 1.0, &self.sin, xim, 1.0, &mut fre);
        gemm(OUTPUT_LEN, n, b, 1.0, &self.cos, xim, 0.0, &mut fim);
        gemm(OUTPUT_LEN, n, b, -1.0, &self.sin, xre, 1.0, &mut fim);
        (fre, fim)
    }
}

/// Row-major C = alpha A B + beta C with A [m, k], B [k, n].
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// One-off synthesis. Builds the Fourier kernel on every call; use a
/// [`Synthesizer`] for repeated work.
pub fn synthesize(params: &ParameterVector, variant: &TaskVariant, basis: &BasisSet, noise: Noise) -> Result<Spectrum, SimError> {
    Synthesizer::new(variant, basis)?.synthesize(params, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::basis::{build_basis_set, GridSpec};

    fn setup(name: VariantName) -> (TaskVariant, Synthesizer) {
        let v = TaskVariant::new(name);
        let b = build_basis_set(&v, GridSpec::default()).unwrap();
        let s = Synthesizer::new(&v, &b).unwrap();
        (v, s)
    }

    #[test]
    fn zero_amplitudes_give_zero_spectrum() {
        let (v, s) = setup(VariantName::Standard14);
        let mut p = sample_parameters(&v, 3);
        for i in v.indices_of(|r| matches!(r, ParamRole::Amplitude | ParamRole::BaselineCoeff)) {
            p.values[i] = 0.0;
        }
        let sp = s.synthesize(&p, Noise::Off).unwrap();
        assert!(sp.clean_signal.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn doubling_amplitude_doubles_area() {
        let (v, s) = setup(VariantName::Simple7);
        let mut p = sample_parameters(&v, 11);
        for i in v.amplitude_indices() {
            p.values[i] = 0.0;
        }
        let naa = v.symbols().iter().position(|x| x == "NAA").unwrap();
        p.values[naa] = 0.4;
        let a1: f64 = s.synthesize(&p, Noise::Off).unwrap().signal.iter().sum();
        p.values[naa] = 0.8;
        let a2: f64 = s.synthesize(&p, Noise::Off).unwrap().signal.iter().sum();
        assert!((a2 / a1 - 2.0).abs() < 1e-6, "{}", a2 / a1);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let v = TaskVariant::new(VariantName::Complex26);
        assert_eq!(sample_parameters(&v, 9), sample_parameters(&v, 9));
        for seed in 0..200 {
            let p = sample_parameters(&v, seed);
            for (x, e) in p.values.iter().zip(&v.schema) {
                assert!(e.bounds.contains(*x), "{} = {x}", e.symbol);
            }
            let mut idx = p.baseline_indices.clone();
            idx.sort();
            idx.dedup();
            assert_eq!(idx.len(), 5);
        }
    }

    #[test]
    fn mismatched_variant_rejected() {
        let (_, s) = setup(VariantName::Standard14);
        let p = sample_parameters(&TaskVariant::new(VariantName::Simple7), 1);
        assert!(matches!(s.synthesize(&p, Noise::Off), Err(SimError::Mismatch(_))));
    }

    #[test]
    fn nan_parameter_rejected() {
        let (v, s) = setup(VariantName::Simple7);
        let mut p = sample_parameters(&v, 1);
        p.values[0] = f64::NAN;
        assert!(matches!(s.synthesize(&p, Noise::Off), Err(SimError::NonFinite(_))));
    }

    #[test]
    fn noise_is_reproducible() {
        let (v, s) = setup(VariantName::Standard14);
        let p = sample_parameters(&v, 5);
        let a = s.synthesize(&p, Noise::Seed(42)).unwrap();
        let b = s.synthesize(&p, Noise::Seed(42)).unwrap();
        assert_eq!(a.signal, b.signal);
        let c = s.synthesize(&p, Noise::Seed(43)).unwrap();
        assert_ne!(a.signal, c.signal);
    }
}
