//! Task-complexity variants and their parameter schemas.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;

/// The three regression tasks of increasing complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Simple7,
    Standard14,
    Complex26,
}

impl VariantName {
    pub const ALL: [VariantName; 3] = [Self::Simple7, Self::Standard14, Self::Complex26];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple7 => "simple7",
            Self::Standard14 => "standard14",
            Self::Complex26 => "complex26",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simple7" => Ok(Self::Simple7),
            "standard14" => Ok(Self::Standard14),
            "complex26" => Ok(Self::Complex26),
            other => Err(SimError::UnknownVariant(other.to_string())),
        }
    }
}

/// What a schema entry controls in the physics model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Amplitude,
    LorentzianGlobal,
    LorentzianPerMet,
    GaussianGlobal,
    Phase0,
    Phase1,
    Snr,
    BaselineCoeff,
}

/// Closed sampling interval `[lo, hi]`. Amplitudes are drawn on `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Maps `v` to `[0, 1]` over the interval.
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / self.width()
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub symbol: String,
    pub role: ParamRole,
    pub bounds: Bounds,
    /// Metabolite this entry belongs to, for amplitudes and per-metabolite widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metabolite: Option<usize>,
    /// Slot in the 5-function baseline draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_slot: Option<usize>,
}

/// Default sampling bounds. Linewidths span 2–20 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultBounds {
    pub amplitude: Bounds,
    /// T2* in seconds; FWHM = 1 / (pi T2*).
    pub t2_star: Bounds,
    /// Per-metabolite Lorentzian damping rate D in 1/s; FWHM = D / pi.
    pub lorentz_rate: Bounds,
    /// Gaussian rate G in 1/s, applied as exp(-(tG)^2).
    pub gauss_rate: Bounds,
    pub phase0: Bounds,
    /// Radians per ppm, pivoting at the reference frequency.
    pub phase1: Bounds,
    pub snr: Bounds,
    pub baseline: Bounds,
}

impl Default for DefaultBounds {
    fn default() -> Self {
        Self {
            amplitude: Bounds::new(0.0, 1.0),
            t2_star: Bounds::new(1.0 / (20.0 * PI), 1.0 / (2.0 * PI)),
            lorentz_rate: Bounds::new(2.0 * PI, 20.0 * PI),
            gauss_rate: Bounds::new(1.0, 20.0),
            phase0: Bounds::new(-0.5, 0.5),
            phase1: Bounds::new(-0.1, 0.1),
            snr: Bounds::new(5.0, 30.0),
            baseline: Bounds::new(-1.0, 1.0),
        }
    }
}

/// Number of baseline functions drawn per spectrum.
pub const BASELINES_PER_SPECTRUM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVariant {
    pub name: VariantName,
    pub metabolite_names: Vec<String>,
    pub schema: Vec<SchemaEntry>,
}

impl TaskVariant {
    pub fn new(name: VariantName) -> Self {
        Self::with_bounds(name, &DefaultBounds::default())
    }

    pub fn with_bounds(name: VariantName, b: &DefaultBounds) -> Self {
        let mets: &[&str] = match name {
            VariantName::Simple7 => &["PCh", "Cre", "NAA", "MM", "Lip"],
            VariantName::Standard14 => &["PCh", "Cre", "NAA", "Glx", "Ins"],
            VariantName::Complex26 => &["PCh", "Cre", "NAA", "Glx", "Ins", "GPC", "Tau", "MM", "Lip"],
        };
        let mut schema: Vec<SchemaEntry> = mets
            .iter()
            .enumerate()
            .map(|(i, m)| entry(m, ParamRole::Amplitude, b.amplitude).met(i))
            .collect();
        let baselines = |schema: &mut Vec<SchemaEntry>| {
            for k in 0..BASELINES_PER_SPECTRUM {
                let mut e = entry(&format!("B{}", k + 1), ParamRole::BaselineCoeff, b.baseline);
                e.baseline_slot = Some(k);
                schema.push(e);
            }
        };
        match name {
            VariantName::Simple7 => {
                schema.push(entry("T2*", ParamRole::LorentzianGlobal, b.t2_star));
                schema.push(entry("SNR", ParamRole::Snr, b.snr));
            }
            VariantName::Standard14 => {
                baselines(&mut schema);
                schema.push(entry("T2*", ParamRole::LorentzianGlobal, b.t2_star));
                schema.push(entry("SNR", ParamRole::Snr, b.snr));
                schema.push(entry("Phi0", ParamRole::Phase0, b.phase0));
                schema.push(entry("Phi1", ParamRole::Phase1, b.phase1));
            }
            VariantName::Complex26 => {
                for (i, m) in mets.iter().enumerate() {
                    schema.push(entry(&format!("D_{m}"), ParamRole::LorentzianPerMet, b.lorentz_rate).met(i));
                }
                schema.push(entry("G", ParamRole::GaussianGlobal, b.gauss_rate));
                schema.push(entry("Phi0", ParamRole::Phase0, b.phase0));
                schema.push(entry("SNR", ParamRole::Snr, b.snr));
                baselines(&mut schema);
            }
        }
        Self {
            name,
            metabolite_names: mets.iter().map(|s| s.to_string()).collect(),
            schema,
        }
    }

    pub fn len(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schema.is_empty()
    }

    pub fn symbols(&self) -> Vec<String> {
        self.schema.iter().map(|e| e.symbol.clone()).collect()
    }

    /// Schema indices holding metabolite amplitudes, in metabolite order.
    pub fn amplitude_indices(&self) -> Vec<usize> {
        self.indices_of(|r| r == ParamRole::Amplitude)
    }

    pub fn indices_of(&self, pred: impl Fn(ParamRole) -> bool) -> Vec<usize> {
        self.schema
            .iter()
            .enumerate()
            .filter(|(_, e)| pred(e.role))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn index_of_role(&self, role: ParamRole) -> Option<usize> {
        self.schema.iter().position(|e| e.role == role)
    }

    pub fn has_baseline(&self) -> bool {
        self.index_of_role(ParamRole::BaselineCoeff).is_some()
    }

    /// Checks bounds are well formed; called when a custom schema is loaded.
    pub fn validate(&self) -> Result<(), SimError> {
        for e in &self.schema {
            if !(e.bounds.lo.is_finite() && e.bounds.hi.is_finite() && e.bounds.lo < e.bounds.hi) {
                return Err(SimError::InvalidBounds(e.symbol.clone()));
            }
        }
        if let Some(i) = self.index_of_role(ParamRole::Snr) {
            let b = self.schema[i].bounds;
            if b.lo <= 0.0 {
                return Err(SimError::InvalidBounds(self.schema[i].symbol.clone()));
            }
        }
        Ok(())
    }
}

fn entry(symbol: &str, role: ParamRole, bounds: Bounds) -> SchemaEntry {
    SchemaEntry {
        symbol: symbol.to_string(),
        role,
        bounds,
        metabolite: None,
        baseline_slot: None,
    }
}

impl SchemaEntry {
    fn met(mut self, i: usize) -> Self {
        self.metabolite = Some(i);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_cardinalities() {
        assert_eq!(TaskVariant::new(VariantName::Simple7).len(), 7);
        assert_eq!(TaskVariant::new(VariantName::Standard14).len(), 14);
        assert_eq!(TaskVariant::new(VariantName::Complex26).len(), 26);
    }

    #[test]
    fn simple7_symbols() {
        let v = TaskVariant::new(VariantName::Simple7);
        assert_eq!(v.symbols(), ["PCh", "Cre", "NAA", "MM", "Lip", "T2*", "SNR"]);
    }

    #[test]
    fn complex26_role_counts() {
        let v = TaskVariant::new(VariantName::Complex26);
        let count = |r| v.indices_of(|x| x == r).len();
        assert_eq!(count(ParamRole::Amplitude), 9);
        assert_eq!(count(ParamRole::LorentzianPerMet), 9);
        assert_eq!(count(ParamRole::GaussianGlobal), 1);
        assert_eq!(count(ParamRole::Phase0), 1);
        assert_eq!(count(ParamRole::Phase1), 0);
        assert_eq!(count(ParamRole::Snr), 1);
        assert_eq!(count(ParamRole::BaselineCoeff), 5);
    }

    #[test]
    fn parse_names() {
        assert_eq!("STANDARD14".parse::<VariantName>().unwrap(), VariantName::Standard14);
        assert!(matches!("seven".parse::<VariantName>(), Err(SimError::UnknownVariant(_))));
    }

    #[test]
    fn snr_bounds_default() {
        for name in VariantName::ALL {
            let v = TaskVariant::new(name);
            let i = v.index_of_role(ParamRole::Snr).unwrap();
            assert_eq!(v.schema[i].bounds, Bounds::new(5.0, 30.0));
            v.validate().unwrap();
        }
    }
}
