//! Structured dropout: cluster dropout over contiguous intra-channel
//! features, feature alpha dropout, activation-weighted feature dropout and
//! their combination, plus the linear warm-up schedule shared by all four.
//!
//! Every operation is the identity in [`Mode::Eval`] and whenever the
//! effective rate is zero; in both cases no random numbers are consumed.

mod alpha;
mod cluster;
mod schedule;
mod score;
mod weighted;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

pub use alpha::{alpha_affine, apply_fad, apply_wfad, ALPHA_PRIME, SELU_ALPHA, SELU_LAMBDA};
pub use cluster::{apply_dropcluster, fit_clusters, Cluster, ClusterConfig, ClusterMap, ClusterSelection};
pub use schedule::{schedule_lambda, ScheduleState};
pub use score::{quantile, score_channels, ChannelScore, ThresholdMode};
pub use weighted::apply_wfd;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DropoutError {
    #[error("rate {0} out of range")]
    Rate(f64),
    #[error("activation epoch {activation} must precede total epochs {total}")]
    Schedule { activation: u32, total: u32 },
    #[error("activations are all zero; channel scores are undefined")]
    DegenerateActivations,
    #[error("non-finite activations")]
    NonFinite,
    #[error("need at least {need} samples to estimate correlations, got {got}")]
    BatchTooSmall { need: usize, got: usize },
    #[error("cluster map has not been fitted")]
    Unfitted,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    #[serde(alias = "dc")]
    DropCluster,
    Fad,
    Wfd,
    Wfad,
}

impl Technique {
    pub fn label(self) -> &'static str {
        match self {
            Self::DropCluster => "dC",
            Self::Fad => "FAD",
            Self::Wfd => "wFD",
            Self::Wfad => "wFAD",
        }
    }

    pub fn is_alpha(self) -> bool {
        matches!(self, Self::Fad | Self::Wfad)
    }
}

/// Where a channel technique sits relative to a residual block's skip
/// connection. Cluster dropout always sits right after the stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Inside,
    Outside,
    PostStem,
}

impl Placement {
    pub fn suffix(self) -> &'static str {
        match self {
            Self::Inside => "_I",
            Self::Outside => "_O",
            Self::PostStem => "",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

fn default_q() -> f64 {
    0.90
}

fn default_activation() -> u32 {
    10
}

fn default_layers() -> Vec<u8> {
    vec![1, 2, 3, 4]
}

/// One dropout site specification from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub technique: Technique,
    pub p_max: f64,
    pub placement: Placement,
    #[serde(default = "default_q")]
    pub q_threshold: f64,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    #[serde(default = "default_activation")]
    pub activation_epoch: u32,
    /// Residual layers hosting the technique; layer `k` runs at `k * p_max`.
    #[serde(default = "default_layers")]
    pub layers: Vec<u8>,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub cluster_selection: ClusterSelection,
}

impl DropoutConfig {
    pub fn new(technique: Technique, placement: Placement, p_max: f64) -> Self {
        Self {
            technique,
            p_max,
            placement,
            q_threshold: default_q(),
            threshold_mode: ThresholdMode::default(),
            activation_epoch: default_activation(),
            layers: if placement == Placement::PostStem { vec![1] } else { default_layers() },
            schedule: ScheduleKind::Linear,
            cluster_selection: ClusterSelection::default(),
        }
    }

    /// Multiplier applied to `p_max` in residual layer `layer` (1-based).
    pub fn layer_multiplier(&self, layer: u8) -> f64 {
        if self.placement == Placement::PostStem {
            1.0
        } else {
            layer as f64
        }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.technique.label(), self.placement.suffix())
    }

    pub fn validate(&self) -> Result<(), DropoutError> {
        if !(0.0..=1.0).contains(&self.p_max) {
            return Err(DropoutError::Rate(self.p_max));
        }
        if !(0.0..=1.0).contains(&self.q_threshold) {
            return Err(DropoutError::Config(format!("q = {} outside [0, 1]", self.q_threshold)));
        }
        if (self.technique == Technique::DropCluster) != (self.placement == Placement::PostStem) {
            return Err(DropoutError::Config("cluster dropout goes post-stem, channel techniques in blocks".into()));
        }
        if self.layers.is_empty() || self.layers.iter().any(|l| !(1..=4).contains(l)) {
            return Err(DropoutError::Config(format!("layers {:?} must be within 1..=4", self.layers)));
        }
        for &l in &self.layers {
            let peak = self.layer_multiplier(l) * self.p_max;
            let ok = if self.technique.is_alpha() { peak < 1.0 } else { peak <= 1.0 };
            if !ok {
                return Err(DropoutError::Rate(peak));
            }
        }
        if self.p_max > 0.10 {
            log::warn!("{}: p_max {} above 0.10 tends to degrade quantification", self.label(), self.p_max);
        }
        Ok(())
    }
}

/// Parses `LABEL@P` such as `FAD_I@0.025` or `dC@0.1`.
impl std::str::FromStr for DropoutConfig {
    type Err = DropoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, rate) = s
            .split_once('@')
            .ok_or_else(|| DropoutError::Config(format!("'{s}': expected LABEL@RATE, e.g. FAD_I@0.05")))?;
        let p: f64 = rate.trim().parse().map_err(|_| DropoutError::Config(format!("'{rate}' is not a rate")))?;
        let (tech, placement) = match label.trim().rsplit_once('_') {
            Some((t, "I")) => (t, Placement::Inside),
            Some((t, "O")) => (t, Placement::Outside),
            _ => (label.trim(), Placement::PostStem),
        };
        let technique = [Technique::DropCluster, Technique::Fad, Technique::Wfd, Technique::Wfad]
            .into_iter()
            .find(|t| t.label().eq_ignore_ascii_case(tech))
            .ok_or_else(|| DropoutError::Config(format!("unknown technique '{tech}'")))?;
        let d = Self::new(technique, placement, p);
        d.validate()?;
        Ok(d)
    }
}

/// Result of one stochastic dropout pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropResult {
    pub output: Tensor,
    /// d(output)/d(input), elementwise; `None` means exactly one everywhere.
    pub grad_scale: Option<Vec<f64>>,
    /// Drop decision per unit: `[channel * batch + sample]` for channel
    /// techniques, `[(channel * batch + sample) * n_clusters(channel) + k]`
    /// flattened per channel for cluster dropout.
    pub dropped: Vec<bool>,
}

impl DropResult {
    pub(crate) fn identity(x: &Tensor) -> Self {
        Self { output: x.clone(), grad_scale: None, dropped: Vec::new() }
    }
}
