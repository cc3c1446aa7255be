//! Metabolite and baseline basis functions.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::variant::TaskVariant;
use super::{SimError, OUTPUT_LEN, PPM_HIGH, PPM_LOW};

/// Acquisition grid of the time-domain signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of complex time-domain points before crop.
    pub n_points: usize,
    /// Dwell time in seconds.
    pub dwell: f64,
    /// Spectrometer frequency in MHz.
    pub mhz: f64,
    /// Chemical shift at 0 Hz.
    pub ref_ppm: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: 2048,
            dwell: 5e-4,
            mhz: 127.74,
            ref_ppm: 4.7,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_points < 1024 {
            return Err(SimError::Grid(format!("n_points {} < 1024", self.n_points)));
        }
        if !(self.dwell > 0.0 && self.mhz > 0.0) {
            return Err(SimError::Grid("dwell and mhz must be positive".into()));
        }
        let half_band_ppm = 0.5 / self.dwell / self.mhz;
        if PPM_LOW < self.ref_ppm - half_band_ppm || PPM_HIGH > self.ref_ppm + half_band_ppm {
            return Err(SimError::Grid("crop window outside the acquisition band".into()));
        }
        Ok(())
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dwell
    }

    /// Offset in Hz of a chemical shift.
    pub fn hz(&self, ppm: f64) -> f64 {
        (ppm - self.ref_ppm) * self.mhz
    }
}

/// The 512-point output axis, descending from 4.2 to 0.2 ppm.
pub fn ppm_axis() -> Vec<f64> {
    let step = (PPM_HIGH - PPM_LOW) / (OUTPUT_LEN - 1) as f64;
    (0..OUTPUT_LEN)
        .map(|j| if j == OUTPUT_LEN - 1 { PPM_LOW } else { PPM_HIGH - j as f64 * step })
        .collect()
}

/// One resonance of a basis function: chemical shift, relative weight and
/// intrinsic damping (1/s).
#[derive(Debug, Clone, Copy)]
struct Peak {
    ppm: f64,
    weight: f64,
    damping: f64,
}

const fn pk(ppm: f64, weight: f64) -> Peak {
    Peak { ppm, weight, damping: 0.0 }
}

const fn broad(ppm: f64, weight: f64, damping: f64) -> Peak {
    Peak { ppm, weight, damping }
}

fn peaks_for(name: &str) -> Option<&'static [Peak]> {
    const NAA: &[Peak] = &[pk(2.01, 1.0)];
    const CRE: &[Peak] = &[pk(3.03, 3.0), pk(3.91, 2.0)];
    const PCH: &[Peak] = &[pk(3.21, 9.0), pk(3.65, 2.0)];
    const GPC: &[Peak] = &[pk(3.23, 9.0), pk(3.67, 2.0)];
    const INS: &[Peak] = &[pk(3.52, 2.0), pk(3.61, 2.0), pk(3.27, 1.0), pk(4.05, 1.0)];
    const TAU: &[Peak] = &[pk(3.42, 2.0), pk(3.25, 2.0)];
    const GLX: &[Peak] = &[pk(2.05, 1.0), pk(2.12, 1.0), pk(2.25, 1.0), pk(2.35, 1.0), pk(2.45, 1.0)];
    const MM: &[Peak] = &[broad(0.91, 1.0, 50.0), broad(1.21, 1.0, 50.0), broad(1.39, 1.0, 50.0)];
    const LIP: &[Peak] = &[broad(0.89, 1.0, 100.0), broad(1.29, 3.0, 100.0)];
    Some(match name {
        "NAA" => NAA,
        "Cre" => CRE,
        "PCh" => PCH,
        "GPC" => GPC,
        "Ins" => INS,
        "Tau" => TAU,
        "Glx" => GLX,
        "MM" => MM,
        "Lip" => LIP,
        _ => return None,
    })
}

/// Metabolite FIDs plus the baseline library on the output axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub names: Vec<String>,
    /// Time-domain signals, one per metabolite, each `grid.n_points` long.
    pub functions: Vec<Vec<Complex64>>,
    /// Real frequency-domain functions sampled on [`ppm_axis`].
    pub baseline_library: Vec<Vec<f64>>,
    pub grid: GridSpec,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        if self.functions.len() != self.names.len() {
            return Err(SimError::Basis("one function per name required".into()));
        }
        let mut seen = HashSet::new();
        for n in &self.names {
            if !seen.insert(n.as_str()) {
                return Err(SimError::Basis(format!("duplicate metabolite {n}")));
            }
        }
        for (n, f) in self.names.iter().zip(&self.functions) {
            if f.len() != self.grid.n_points {
                return Err(SimError::Basis(format!("{n}: length {} != {}", f.len(), self.grid.n_points)));
            }
            if f.iter().map(|z| z.norm_sqr()).sum::<f64>() <= 0.0 {
                return Err(SimError::Basis(format!("{n}: zero norm")));
            }
        }
        if self.baseline_library.len() < 5 {
            return Err(SimError::Basis("baseline library needs at least 5 entries".into()));
        }
        for (i, b) in self.baseline_library.iter().enumerate() {
            if b.len() != OUTPUT_LEN {
                return Err(SimError::Basis(format!("baseline {i} has length {}", b.len())));
            }
            if self.baseline_library[..i].iter().any(|o| o == b) {
                return Err(SimError::Basis(format!("baseline {i} duplicates an earlier entry")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let bytes = std::fs::read(path)?;
        let b: BasisSet = serde_json::from_slice(&bytes).map_err(|e| SimError::Basis(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let s = serde_json::to_vec(self).map_err(|e| SimError::Basis(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Builds the synthetic basis for `variant`: each metabolite is a sum of
/// singlets whose weights sum to one.
pub fn build_basis_set(variant: &TaskVariant, grid: GridSpec) -> Result<BasisSet, SimError> {
    grid.validate()?;
    let mut functions = Vec::with_capacity(variant.metabolite_names.len());
    for name in &variant.metabolite_names {
        let peaks = peaks_for(name).ok_or_else(|| SimError::Basis(format!("no basis definition for {name}")))?;
        let total: f64 = peaks.iter().map(|p| p.weight).sum();
        let fid = (0..grid.n_points)
            .map(|n| {
                let t = grid.time(n);
                peaks
                    .iter()
                    .map(|p| {
                        let w = p.weight / total * (-p.damping * t).exp();
                        Complex64::from_polar(w, 2.0 * PI * grid.hz(p.ppm) * t)
                    })
                    .sum()
            })
            .collect();
        functions.push(fid);
    }
    let basis = BasisSet {
        names: variant.metabolite_names.clone(),
        functions,
        baseline_library: baseline_library(),
        grid,
    };
    basis.validate()?;
    Ok(basis)
}

/// 16 smooth functions: Legendre polynomials P0..P7 over the crop window and
/// eight broad Gaussians. Each is scaled to unit peak magnitude.
pub fn baseline_library() -> Vec<Vec<f64>> {
    let axis = ppm_axis();
    let mid = 0.5 * (PPM_LOW + PPM_HIGH);
    let half = 0.5 * (PPM_HIGH - PPM_LOW);
    let mut lib = Vec::with_capacity(16);
    for order in 0..8 {
        lib.push(axis.iter().map(|&p| legendre(order, (p - mid) / half)).collect::<Vec<_>>());
    }
    let gaussians = [
        (0.6, 0.6),
        (1.2, 0.9),
        (1.8, 0.7),
        (2.4, 1.2),
        (2.9, 0.8),
        (3.4, 1.0),
        (3.9, 0.7),
        (2.2, 1.8),
    ];
    for (center, width) in gaussians {
        lib.push(
            axis.iter()
                .map(|&p| (-0.5 * ((p - center) / width).powi(2)).exp())
                .collect(),
        );
    }
    for f in &mut lib {
        let m = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        f.iter_mut().for_each(|v| *v /= m);
    }
    lib
}

fn legendre(order: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    match order {
        0 => p0,
        1 => p1,
        _ => {
            for k in 1..order {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}
