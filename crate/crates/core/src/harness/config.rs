use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dropout::DropoutConfig;
use crate::loss::{SBarScaling, DEFAULT_PEN_MIN};
use crate::model::{ModelConfig, Preset};
use crate::sim::{TaskVariant, VariantName};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Where the spectra come from: an existing file, or generated in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: f64,
}

fn default_n() -> usize {
    10_000
}
fn default_data_seed() -> u64 {
    1
}
fn default_split() -> f64 {
    0.8
}
fn default_epochs() -> u32 {
    100
}
fn default_batch() -> usize {
    250
}
fn default_lr() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_pen_min() -> f64 {
    DEFAULT_PEN_MIN
}
fn default_condenser() -> usize {
    2
}
fn default_output() -> PathBuf {
    PathBuf::from("run")
}
fn default_div_factor() -> f64 {
    10.0
}
fn default_div_patience() -> u32 {
    3
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { path: None, n: default_n(), seed: default_data_seed(), split: default_split() }
    }
}

/// Abort rule on validation MAPE relative to its first-epoch value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceRule {
    #[serde(default = "default_div_factor")]
    pub factor: f64,
    #[serde(default = "default_div_patience")]
    pub patience: u32,
}

impl Default for DivergenceRule {
    fn default() -> Self {
        Self { factor: default_div_factor(), patience: default_div_patience() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub variant: VariantName,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    /// Dropout site specifications.
    #[serde(default)]
    pub dropout: Vec<DropoutConfig>,
    /// Overrides `p_max` of every dropout entry when set.
    #[serde(default)]
    pub p_max: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Group-weighted loss; plain whole-output MSE when off.
    #[serde(default = "default_true")]
    pub adaptive_loss: bool,
    #[serde(default = "default_pen_min")]
    pub pen_min: f64,
    #[serde(default)]
    pub s_bar_scaling: SBarScaling,
    #[serde(default = "default_true")]
    pub crelu_half: bool,
    #[serde(default = "default_condenser")]
    pub condenser_blocks: usize,
    #[serde(default = "default_true")]
    pub condenser_attention: bool,
    #[serde(default)]
    pub divergence: DivergenceRule,
}

fn default_preset() -> Preset {
    Preset::Tiny
}

impl RunConfig {
    pub fn new(variant: VariantName) -> Self {
        Self {
            name: None,
            variant,
            preset: Preset::Tiny,
            dropout: Vec::new(),
            p_max: None,
            seed: 0,
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: Optimizer::Adam,
            dataset: DatasetSpec::default(),
            output_dir: default_output(),
            adaptive_loss: true,
            pen_min: DEFAULT_PEN_MIN,
            s_bar_scaling: SBarScaling::Raw,
            crelu_half: true,
            condenser_blocks: default_condenser(),
            condenser_attention: true,
            divergence: DivergenceRule::default(),
        }
    }

    /// Full-size profile: 125,000 spectra, the 50-layer preset, 100 epochs.
    pub fn full_scale(mut self) -> Self {
        self.preset = Preset::Resnet50;
        self.dataset.n = 125_000;
        self.epochs = 100;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Dropout entries with the `p_max` override applied.
    pub fn effective_dropout(&self) -> Vec<DropoutConfig> {
        self.dropout
            .iter()
            .cloned()
            .map(|mut d| {
                if let Some(p) = self.p_max {
                    d.p_max = p;
                }
                d
            })
            .collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            preset: self.preset,
            input_length: crate::sim::OUTPUT_LEN,
            output_dim: TaskVariant::new(self.variant).len(),
            crelu_half: self.crelu_half,
            condenser_blocks: self.condenser_blocks,
            condenser_attention: self.condenser_attention,
            dropout: self.effective_dropout(),
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON encoding, excluding the output location.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let d = self.effective_dropout();
        if d.is_empty() {
            "baseline".into()
        } else {
            d.iter().map(|x| x.label()).collect::<Vec<_>>().join(", ")
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.pen_min >= 0.0 && self.pen_min.is_finite()) {
            return bad(format!("pen_min {} must be non-negative", self.pen_min));
        }
        if !(self.divergence.factor > 1.0 && self.divergence.patience >= 1) {
            return bad("divergence factor must exceed 1 and patience be at least 1".into());
        }
        if let Some(p) = &self.dataset.path {
            if !p.exists() {
                return bad(format!("dataset {} does not exist", p.display()));
            }
        } else if self.dataset.n < 2 || !(self.dataset.split > 0.0 && self.dataset.split < 1.0) {
            return bad(format!("dataset n = {} with split {} leaves an empty split", self.dataset.n, self.dataset.split));
        }
        for d in self.effective_dropout() {
            if d.activation_epoch >= self.epochs {
                return bad(format!(
                    "{}: activation epoch {} leaves no warm-up within {} epochs",
                    d.label(),
                    d.activation_epoch,
                    self.epochs
                ));
            }
        }
        self.model_config().validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_takes_defaults() {
        let c = RunConfig::from_toml_str("variant = \"simple7\"").unwrap();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (100, 250, 1e-3));
        assert_eq!(c.optimizer, Optimizer::Adam);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::new(VariantName::Standard14);
        c.dropout.push(DropoutConfig::new(crate::dropout::Technique::Wfad, crate::dropout::Placement::Outside, 0.05));
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("variant = \"simple7\"\nepochz = 3").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::new(VariantName::Simple7);
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
    }
}
