//! Precision-centric metrics: MAPE with its spread, pooled r², and the
//! temporal-consistency metric S̄ over a per-epoch curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::TaskVariant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("target variance is zero")]
    ZeroVariance,
    #[error("every target is zero; percent error undefined")]
    AllExcluded,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("epochs must be strictly increasing ({prev} then {next})")]
    NonIncreasing { prev: u32, next: u32 },
}

/// Per-epoch curve of one scalar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub epochs: Vec<u32>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn push(&mut self, epoch: u32, value: f64) -> Result<(), MetricError> {
        if !value.is_finite() {
            return Err(MetricError::NonFinite("metric series"));
        }
        if let Some(&prev) = self.epochs.last() {
            if epoch <= prev {
                return Err(MetricError::NonIncreasing { prev, next: epoch });
            }
        }
        self.epochs.push(epoch);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn s_bar(&self) -> Result<f64, MetricError> {
        s_bar(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Mean absolute percent error, in percent.
    pub mean: f64,
    /// Population standard deviation of the absolute percent errors.
    pub std: f64,
    /// Elements used.
    pub count: usize,
    /// Elements skipped because their target is exactly zero.
    pub excluded: usize,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        Err(MetricError::Length(a.len(), b.len()))
    } else {
        Ok(())
    }
}

/// `100 |pred - target| / |target|` per element, skipping zero targets.
pub fn absolute_percent_errors(pred: &[f64], target: &[f64]) -> Result<(Vec<f64>, usize), MetricError> {
    same_len(pred, target)?;
    let mut out = Vec::with_capacity(pred.len());
    let mut excluded = 0;
    for (&p, &t) in pred.iter().zip(target) {
        if t == 0.0 {
            excluded += 1;
        } else {
            out.push(100.0 * (p - t).abs() / t.abs());
        }
    }
    Ok((out, excluded))
}

pub fn mape(pred: &[f64], target: &[f64]) -> Result<Mape, MetricError> {
    let (ape, excluded) = absolute_percent_errors(pred, target)?;
    if ape.is_empty() {
        return Err(MetricError::AllExcluded);
    }
    let (mean, var) = mean_var(&ape);
    Ok(Mape { mean, std: var.sqrt(), count: ape.len(), excluded })
}

/// Coefficient of determination `1 - SS_res / SS_tot`, with every element
/// pooled into one set.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    same_len(pred, target)?;
    if target.len() < 2 {
        return Err(MetricError::TooShort { need: 2, got: target.len() });
    }
    let (mean, _) = mean_var(target);
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson_r(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    same_len(pred, target)?;
    if target.len() < 2 {
        return Err(MetricError::TooShort { need: 2, got: target.len() });
    }
    let (mp, _) = mean_var(pred);
    let (mt, _) = mean_var(target);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp).powi(2);
        syy += (t - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// S̄: population variance of the unit-spaced second differences
/// `m[k+1] - 2 m[k] + m[k-1]`.
pub fn s_bar(curve: &[f64]) -> Result<f64, MetricError> {
    if curve.len() < 3 {
        return Err(MetricError::TooShort { need: 3, got: curve.len() });
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite("metric curve"));
    }
    let d: Vec<f64> = curve.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    Ok(mean_var(&d).1)
}

/// Mean and population variance, two-pass.
pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaboliteReport {
    pub name: String,
    pub mape: f64,
    pub std: f64,
    pub r2: Option<f64>,
}

/// Metabolite-amplitude precision summary for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mape: f64,
    pub std: f64,
    pub r2: f64,
    pub excluded: usize,
    pub per_metabolite: Vec<MetaboliteReport>,
    /// S̄ per monitored series, filled in from the run history.
    #[serde(default)]
    pub s_bar: BTreeMap<String, f64>,
    #[serde(default)]
    pub best_epoch: Option<u32>,
}

/// Anything that maps spectra to physical-unit parameter estimates.
pub trait Predictor {
    /// `spectra` is row-major `[n, 512]`; returns row-major `[n, n_params]`.
    fn predict(&mut self, spectra: &[f32], n: usize) -> anyhow::Result<Vec<f64>>;
}

/// Builds the report from flattened `[n, n_params]` predictions and targets,
/// restricted to the amplitude columns.
pub fn report_from_predictions(variant: &TaskVariant, pred: &[f64], target: &[f64]) -> Result<EvalReport, MetricError> {
    same_len(pred, target)?;
    let p = variant.len();
    let n = target.len() / p;
    let amps = variant.amplitude_indices();
    let mut all_p = Vec::with_capacity(n * amps.len());
    let mut all_t = Vec::with_capacity(n * amps.len());
    let mut per_metabolite = Vec::with_capacity(amps.len());
    for (m, &col) in amps.iter().enumerate() {
        let cp: Vec<f64> = (0..n).map(|i| pred[i * p + col]).collect();
        let ct: Vec<f64> = (0..n).map(|i| target[i * p + col]).collect();
        let mm = mape(&cp, &ct)?;
        per_metabolite.push(MetaboliteReport {
            name: variant.metabolite_names[m].clone(),
            mape: mm.mean,
            std: mm.std,
            r2: r_squared(&cp, &ct).ok(),
        });
        all_p.extend(cp);
        all_t.extend(ct);
    }
    let total = mape(&all_p, &all_t)?;
    Ok(EvalReport {
        mape: total.mean,
        std: total.std,
        r2: r_squared(&all_p, &all_t)?,
        excluded: total.excluded,
        per_metabolite,
        s_bar: BTreeMap::new(),
        best_epoch: None,
    })
}

/// Runs `model` over rows `rows` of `ds` and reports metabolite precision.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &mut P,
    ds: &crate::sim::Dataset,
    rows: std::ops::Range<usize>,
) -> anyhow::Result<EvalReport> {
    use crate::sim::OUTPUT_LEN;
    let n = rows.len();
    let spectra = &ds.spectra[rows.start * OUTPUT_LEN..rows.end * OUTPUT_LEN];
    let pred = model.predict(spectra, n)?;
    let p = ds.n_params();
    if pred.len() != n * p {
        anyhow::bail!("model emits {} values for {} rows of a {}-parameter schema", pred.len(), n, p);
    }
    let target: Vec<f64> = ds.targets[rows.start * p..rows.end * p].iter().map(|&x| x as f64).collect();
    Ok(report_from_predictions(&ds.variant, &pred, &target)?)
}
