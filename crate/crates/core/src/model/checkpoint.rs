use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelError};
use crate::nn::Module;

pub const CHECKPOINT_FORMAT: &str = "specdrop-checkpoint";
const MAGIC: &[u8; 4] = b"SDW1";

/// JSON sidecar written next to the weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub config_hash: String,
    pub epoch: u32,
    pub input_scale: f64,
    pub n_params: usize,
    pub weights_sha256: String,
    #[serde(default)]
    pub metrics: serde_json::Value,
}

fn sidecar(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

/// Writes `weights` (magic, count, little-endian `f64` values in parameter
/// visit order) and its `.json` sidecar.
pub fn save_checkpoint(
    model: &mut Model,
    weights: &Path,
    epoch: u32,
    metrics: serde_json::Value,
) -> Result<CheckpointMeta, ModelError> {
    let params = model.export_params();
    let mut bytes = Vec::with_capacity(12 + 8 * params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        config: model.cfg.clone(),
        config_hash: model.cfg.hash(),
        epoch,
        input_scale: model.input_scale,
        n_params: params.len(),
        weights_sha256: hex::encode(Sha256::digest(&bytes)),
        metrics,
    };
    if let Some(dir) = weights.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(weights)?.write_all(&bytes)?;
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(sidecar(weights), json)?;
    Ok(meta)
}

pub fn load_checkpoint(weights: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(sidecar(weights))?)
        .map_err(|e| ModelError::Checkpoint(format!("sidecar: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != 1 {
        return Err(ModelError::Checkpoint(format!("unsupported {} v{}", meta.format, meta.version)));
    }
    if meta.config.hash() != meta.config_hash {
        return Err(ModelError::Checkpoint("config hash mismatch".into()));
    }
    let bytes = fs::read(weights)?;
    if hex::encode(Sha256::digest(&bytes)) != meta.weights_sha256 {
        return Err(ModelError::Checkpoint("weights digest mismatch".into()));
    }
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(ModelError::Checkpoint("bad weights header".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 12 + 8 * count || count != meta.n_params {
        return Err(ModelError::Checkpoint(format!("weights hold {} bytes for {count} values", bytes.len() - 12)));
    }
    let params: Vec<f64> =
        bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut model = Model::build(&meta.config)?;
    model.import_params(&params).map_err(ModelError::Checkpoint)?;
    model.input_scale = meta.input_scale;
    Ok((model, meta))
}
