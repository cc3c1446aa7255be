//! Labeled datasets and their on-disk container.
//!
//! Layout: one line of compact UTF-8 JSON (the header) terminated by `\n`,
//! then `n * 512` little-endian `f32` spectra (row-major), then
//! `n * schema_len` little-endian `f32` targets (row-major).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::basis::{build_basis_set, GridSpec};
use super::synth::{sample_parameters_with, sample_rng, Noise, Synthesizer};
use super::variant::{SchemaEntry, TaskVariant, VariantName};
use super::{SimError, OUTPUT_LEN, PPM_HIGH, PPM_LOW};

pub const FORMAT_NAME: &str = "specdrop-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("specdrop-sim/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variant: TaskVariant,
    pub n: usize,
    /// Rows `0..n_train` are training rows; the rest are validation rows.
    pub n_train: usize,
    pub spectra: Vec<f32>,
    pub targets: Vec<f32>,
    pub seed: u64,
    pub generator_version: String,
    pub grid: GridSpec,
}

impl Dataset {
    pub fn n_params(&self) -> usize {
        self.variant.len()
    }

    pub fn spectrum(&self, i: usize) -> &[f32] {
        &self.spectra[i * OUTPUT_LEN..(i + 1) * OUTPUT_LEN]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let p = self.n_params();
        &self.targets[i * p..(i + 1) * p]
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i < self.n_train {
            Split::Train
        } else {
            Split::Val
        }
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn val_indices(&self) -> std::ops::Range<usize> {
        self.n_train..self.n
    }

    fn header(&self) -> Header {
        Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            variant: self.variant.name,
            n: self.n,
            n_train: self.n_train,
            signal_len: OUTPUT_LEN,
            schema: self.variant.schema.clone(),
            metabolites: self.variant.metabolite_names.clone(),
            seed: self.seed,
            ppm: [PPM_HIGH, PPM_LOW],
            generator_version: self.generator_version.clone(),
            grid: self.grid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    variant: VariantName,
    n: usize,
    n_train: usize,
    signal_len: usize,
    schema: Vec<SchemaEntry>,
    metabolites: Vec<String>,
    seed: u64,
    ppm: [f64; 2],
    generator_version: String,
    grid: GridSpec,
}

/// Generates `n` spectra with the default grid; rows are independent and
/// row `i` depends only on `(seed, i)`.
pub fn generate_dataset(variant: &TaskVariant, n: usize, seed: u64, split: f64) -> Result<Dataset, SimError> {
    generate_dataset_on(variant, GridSpec::default(), n, seed, split)
}

pub fn generate_dataset_on(
    variant: &TaskVariant,
    grid: GridSpec,
    n: usize,
    seed: u64,
    split: f64,
) -> Result<Dataset, SimError> {
    if n == 0 {
        return Err(SimError::Config("n must be at least 1".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(SimError::Config(format!("split {split} outside (0, 1)")));
    }
    let basis = build_basis_set(variant, grid)?;
    let synth = Synthesizer::new(variant, &basis)?;
    let lib = basis.baseline_library.len();
    let p = variant.len();
    let mut spectra = Vec::with_capacity(n * OUTPUT_LEN);
    let mut targets = Vec::with_capacity(n * p);
    const BLOCK: usize = 256;
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let mut params = Vec::with_capacity(end - start);
        let mut noise = Vec::with_capacity(end - start);
        for i in start..end {
            let mut rng = sample_rng(seed, i as u64);
            params.push(sample_parameters_with(variant, lib, &mut rng));
            noise.push(Noise::Seed(rng.next_u64()));
        }
        for s in synth.synthesize_batch(&params, &noise)? {
            spectra.extend(s.signal.iter().map(|&x| x as f32));
            targets.extend(s.params.values.iter().map(|&x| x as f32));
        }
    }
    Ok(Dataset {
        variant: variant.clone(),
        n,
        n_train: ((n as f64) * split).round() as usize,
        spectra,
        targets,
        seed,
        generator_version: GENERATOR_VERSION.to_string(),
        grid,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(&ds.header()).map_err(|e| SimError::Format(e.to_string()))?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for x in ds.spectra.iter().chain(&ds.targets) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, SimError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(SimError::Format("missing header terminator".into()));
    }
    line.pop();
    let raw: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| SimError::Format(format!("malformed header: {e}")))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(SimError::UnsupportedVersion(v)),
        None => return Err(SimError::Format("header has no version".into())),
    }
    let h: Header = serde_json::from_value(raw).map_err(|e| SimError::Format(format!("malformed header: {e}")))?;
    if h.format != FORMAT_NAME {
        return Err(SimError::Format(format!("unexpected format {:?}", h.format)));
    }
    if h.signal_len != OUTPUT_LEN || h.n_train > h.n {
        return Err(SimError::Format("inconsistent header counts".into()));
    }
    let variant = TaskVariant {
        name: h.variant,
        metabolite_names: h.metabolites,
        schema: h.schema,
    };
    variant.validate()?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let p = variant.len();
    let expected = h.n * (OUTPUT_LEN + p) * 4;
    if body.len() != expected {
        return Err(SimError::Format(format!(
            "array length mismatch: header implies {expected} bytes, found {}",
            body.len()
        )));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (spectra, targets) = floats.split_at(h.n * OUTPUT_LEN);
    Ok(Dataset {
        variant,
        n: h.n,
        n_train: h.n_train,
        spectra: spectra.to_vec(),
        targets: targets.to_vec(),
        seed: h.seed,
        generator_version: h.generator_version,
        grid: h.grid,
    })
}
