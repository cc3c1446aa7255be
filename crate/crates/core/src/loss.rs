//! Grouped MSE loss with per-group adaptive weights.
//!
//! Each group's weight is recomputed once per epoch from its validation
//! correlation `r`, determination `r²`, the S̄ of its validation error curve,
//! and an epoch penalty:
//!
//! ```text
//! pen_epoch = epoch / 100
//! value     = ((1 - r) + (1 - r²) + S̄) (10 + pen_epoch)
//! λ         = max(value, pen_min + pen_epoch + S̄)
//! ```

use serde::{Deserialize, Serialize};

use crate::metrics::{self, MetricSeries};
use crate::sim::{ParamRole, TaskVariant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("non-finite statistics for group {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Metabolites,
    LineBroadening,
    Noise,
    Baseline,
    Phase,
}

impl GroupKind {
    pub fn of(role: ParamRole) -> Self {
        match role {
            ParamRole::Amplitude => Self::Metabolites,
            ParamRole::LorentzianGlobal | ParamRole::LorentzianPerMet | ParamRole::GaussianGlobal => {
                Self::LineBroadening
            }
            ParamRole::Snr => Self::Noise,
            ParamRole::BaselineCoeff => Self::Baseline,
            ParamRole::Phase0 | ParamRole::Phase1 => Self::Phase,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Metabolites => "metabolites",
            Self::LineBroadening => "line_broadening",
            Self::Noise => "noise",
            Self::Baseline => "baseline",
            Self::Phase => "phase",
        }
    }
}

/// How S̄ enters the weight formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SBarScaling {
    #[default]
    Raw,
    /// `S̄ / (1 + S̄)`, bounded in `[0, 1)`.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGroup {
    pub kind: GroupKind,
    pub indices: Vec<usize>,
    pub r: f64,
    pub r2: f64,
    pub s_bar: f64,
    /// Validation error curve feeding S̄.
    pub history: MetricSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGroups {
    pub n_params: usize,
    pub groups: Vec<LossGroup>,
    pub pen_min: f64,
    pub s_bar_scaling: SBarScaling,
}

pub const DEFAULT_PEN_MIN: f64 = 1.0;

impl LossGroups {
    /// Partitions the schema by role; groups keep their first-seen order.
    pub fn for_variant(variant: &TaskVariant) -> Self {
        let mut groups: Vec<LossGroup> = Vec::new();
        for (i, e) in variant.schema.iter().enumerate() {
            let kind = GroupKind::of(e.role);
            match groups.iter_mut().find(|g| g.kind == kind) {
                Some(g) => g.indices.push(i),
                None => groups.push(LossGroup {
                    kind,
                    indices: vec![i],
                    r: 0.0,
                    r2: 0.0,
                    s_bar: 0.0,
                    history: MetricSeries::new(format!("val_err_{}", kind.as_str())),
                }),
            }
        }
        Self { n_params: variant.len(), groups, pen_min: DEFAULT_PEN_MIN, s_bar_scaling: SBarScaling::Raw }
    }

    /// Group index of each schema column.
    pub fn membership(&self) -> Vec<usize> {
        let mut m = vec![0; self.n_params];
        for (g, grp) in self.groups.iter().enumerate() {
            for &i in &grp.indices {
                m[i] = g;
            }
        }
        m
    }

    /// Refreshes `r`, `r²` and S̄ of every group from validation predictions
    /// in normalized target units (`[n, n_params]`, row-major). The error
    /// curve is the group's mean absolute error in percent of the unit range.
    pub fn update_stats(&mut self, epoch: u32, pred: &[f64], target: &[f64]) -> Result<(), LossError> {
        if pred.len() != target.len() || !pred.len().is_multiple_of(self.n_params) {
            return Err(LossError::Shape(format!("{} predictions, {} targets", pred.len(), target.len())));
        }
        let n = pred.len() / self.n_params;
        for g in &mut self.groups {
            let mut gp = Vec::with_capacity(n * g.indices.len());
            let mut gt = Vec::with_capacity(n * g.indices.len());
            for row in 0..n {
                for &i in &g.indices {
                    gp.push(pred[row * self.n_params + i]);
                    gt.push(target[row * self.n_params + i]);
                }
            }
            let name = g.kind.as_str().to_string();
            g.r = metrics::pearson_r(&gp, &gt).map_err(|_| LossError::NonFinite(name.clone()))?;
            g.r2 = metrics::r_squared(&gp, &gt).unwrap_or(0.0);
            let err = 100.0 * gp.iter().zip(&gt).map(|(p, t)| (p - t).abs()).sum::<f64>() / gp.len() as f64;
            g.history.push(epoch, err).map_err(|_| LossError::NonFinite(name.clone()))?;
            g.s_bar = if g.history.len() >= 3 { g.history.s_bar().unwrap_or(0.0) } else { 0.0 };
            if !(g.r.is_finite() && g.r2.is_finite() && g.s_bar.is_finite()) {
                return Err(LossError::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// The weight formula for one group.
pub fn lambda(r: f64, r2: f64, s_bar: f64, epoch: u32, pen_min: f64) -> f64 {
    let pen_epoch = epoch as f64 / 100.0;
    let value = ((1.0 - r) + (1.0 - r2) + s_bar) * (10.0 + pen_epoch);
    value.max(pen_min + pen_epoch + s_bar)
}

pub fn compute_lambdas(groups: &LossGroups, epoch: u32) -> Result<Vec<f64>, LossError> {
    groups
        .groups
        .iter()
        .map(|g| {
            if !(g.r.is_finite() && g.r2.is_finite() && g.s_bar.is_finite()) {
                return Err(LossError::NonFinite(g.kind.as_str().to_string()));
            }
            let s = match groups.s_bar_scaling {
                SBarScaling::Raw => g.s_bar,
                SBarScaling::Unit => g.s_bar / (1.0 + g.s_bar),
            };
            Ok(lambda(g.r, g.r2, s, epoch, groups.pen_min))
        })
        .collect()
}

/// Whole-output MSE (weight 1) plus λ-weighted group MSEs plus per-parameter
/// MSEs weighted by their group's λ. Returns the loss and its gradient with
/// respect to `pred`.
pub fn total_loss_with_grad(
    pred: &[f64],
    target: &[f64],
    groups: &LossGroups,
    lambdas: &[f64],
) -> Result<(f64, Vec<f64>), LossError> {
    let p = groups.n_params;
    if pred.len() != target.len() || p == 0 || !pred.len().is_multiple_of(p) {
        return Err(LossError::Shape(format!("{} predictions, {} targets, {p} params", pred.len(), target.len())));
    }
    if lambdas.len() != groups.groups.len() {
        return Err(LossError::Shape(format!("{} lambdas for {} groups", lambdas.len(), groups.groups.len())));
    }
    let n = pred.len() / p;
    let member = groups.membership();
    let sizes: Vec<f64> = groups.groups.iter().map(|g| g.indices.len() as f64).collect();
    // Coefficient multiplying (pred - target)^2 for column i.
    let coef: Vec<f64> = (0..p)
        .map(|i| {
            let g = member[i];
            1.0 / (n * p) as f64 + lambdas[g] / (n as f64 * sizes[g]) + lambdas[g] / n as f64
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (k, (&y, &t)) in pred.iter().zip(target).enumerate() {
        let d = y - t;
        let c = coef[k % p];
        loss += c * d * d;
        grad[k] = 2.0 * c * d;
    }
    Ok((loss, grad))
}

pub fn total_loss(pred: &[f64], target: &[f64], groups: &LossGroups, lambdas: &[f64]) -> Result<f64, LossError> {
    total_loss_with_grad(pred, target, groups, lambdas).map(|(l, _)| l)
}
