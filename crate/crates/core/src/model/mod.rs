//! 1D pre-activation residual CNNs with CReLU in the first half, strided
//! branch convolutions and pooled projection shortcuts, dropout insertion
//! sites inside and outside every block, and a depthwise strided condenser
//! ahead of the pooled linear head.

mod blocks;
mod checkpoint;
mod site;

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{DropoutConfig, DropoutError, Mode, Placement};
use crate::nn::{Activation, ActivationKind, Affine, GlobalAvgPool, Linear, Module, Param, Tensor};
use crate::sim::OUTPUT_LEN;
use blocks::{BlockSpec, CondenserBlock, ResBlock, Stem};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use site::DropoutSite;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dropout at {site}: {source}")]
    Dropout { site: String, source: DropoutError },
    #[error("non-finite activations at {site}")]
    NonFinite { site: String },
    #[error("shape: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// One basic block per stage, stage widths 16..128.
    Tiny,
    /// Bottleneck stages of 3, 4, 6 and 3 blocks.
    Resnet50,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Self::Tiny),
            "resnet50" => Ok(Self::Resnet50),
            other => Err(format!("unknown preset '{other}' (tiny, resnet50)")),
        }
    }
}

/// One residual stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub width: usize,
    /// Bottleneck width; `None` for basic blocks.
    pub mid: Option<usize>,
    pub stride: usize,
}

fn default_input_length() -> usize {
    OUTPUT_LEN
}

fn default_true() -> bool {
    true
}

fn default_condenser() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    #[serde(default = "default_input_length")]
    pub input_length: usize,
    pub output_dim: usize,
    #[serde(default = "default_true")]
    pub crelu_half: bool,
    #[serde(default = "default_condenser")]
    pub condenser_blocks: usize,
    #[serde(default = "default_true")]
    pub condenser_attention: bool,
    #[serde(default)]
    pub dropout: Vec<DropoutConfig>,
    #[serde(default)]
    pub seed: u64,
}

/// Analytic activation shape after a named stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeRow {
    pub stage: String,
    pub channels: usize,
    pub len: usize,
}

impl ModelConfig {
    pub fn new(preset: Preset, output_dim: usize) -> Self {
        Self {
            preset,
            input_length: OUTPUT_LEN,
            output_dim,
            crelu_half: true,
            condenser_blocks: default_condenser(),
            condenser_attention: true,
            dropout: Vec::new(),
            seed: 0,
        }
    }

    pub fn tiny(output_dim: usize) -> Self {
        Self::new(Preset::Tiny, output_dim)
    }

    pub fn resnet50(output_dim: usize) -> Self {
        Self::new(Preset::Resnet50, output_dim)
    }

    /// Width leaving the stem, after the activation.
    pub fn stem_width(&self) -> usize {
        match self.preset {
            Preset::Tiny => 16,
            Preset::Resnet50 => 64,
        }
    }

    pub fn stages(&self) -> [StageSpec; 4] {
        let mut s = match self.preset {
            Preset::Tiny => [16, 32, 64, 128].map(|w| StageSpec { blocks: 1, width: w, mid: None, stride: 2 }),
            Preset::Resnet50 => [(3, 64), (4, 128), (6, 256), (3, 512)]
                .map(|(b, m)| StageSpec { blocks: b, width: 4 * m, mid: Some(m), stride: 2 }),
        };
        s[0].stride = 1;
        s
    }

    /// Activation used in stage `layer` (1-based; 0 is the stem).
    pub fn activation(&self, layer: usize) -> ActivationKind {
        if self.crelu_half && layer <= 2 {
            ActivationKind::CRelu
        } else {
            ActivationKind::Relu
        }
    }

    /// Length bookkeeping through the network, derived from the stage list.
    pub fn shape_table(&self) -> Vec<ShapeRow> {
        let strided = |l: usize, s: usize| (l + 2 - 3) / s + 1;
        let mut rows = Vec::new();
        let mut len = (self.input_length + 6 - 7) / 2 + 1;
        len = strided(len, 2);
        rows.push(ShapeRow { stage: "stem".into(), channels: self.stem_width(), len });
        for (k, st) in self.stages().iter().enumerate() {
            len = strided(len, st.stride);
            rows.push(ShapeRow { stage: format!("layer{}", k + 1), channels: st.width, len });
        }
        let c = self.stages()[3].width;
        for i in 0..self.condenser_blocks {
            len = strided(len, 2);
            rows.push(ShapeRow { stage: format!("condenser{i}"), channels: c, len });
        }
        rows
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.output_dim == 0 {
            return Err(ModelError::Config("output_dim must be positive".into()));
        }
        if self.input_length < 64 {
            return Err(ModelError::Config(format!("input length {} too short", self.input_length)));
        }
        let last = self.shape_table().last().map(|r| r.len).unwrap_or(0);
        if last > 16 {
            return Err(ModelError::Config(format!(
                "spatial length {last} reaches the pooling layer; add condenser blocks to bring it to 16 or less"
            )));
        }
        for d in &self.dropout {
            d.validate().map_err(|e| ModelError::Config(format!("{}: {e}", d.label())))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Schedule position supplied with every forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepContext {
    pub epoch: u32,
    pub total_epochs: u32,
}

/// Fingerprint of one activation tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub site: String,
    pub shape: (usize, usize, usize),
    pub hash: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Trace {
    enabled: bool,
    entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn record(&mut self, site: &str, t: &Tensor) -> Result<(), ModelError> {
        if !t.is_finite() {
            return Err(ModelError::NonFinite { site: site.to_string() });
        }
        if self.enabled {
            let mut h = DefaultHasher::new();
            t.shape().hash(&mut h);
            t.data.iter().for_each(|v| v.to_bits().hash(&mut h));
            self.entries.push(TraceEntry { site: site.to_string(), shape: t.shape(), hash: h.finish() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    /// Multiplier applied to raw spectra before the stem.
    pub input_scale: f64,
    pub ctx: StepContext,
    stem: Stem,
    post_stem: DropoutSite,
    blocks: Vec<ResBlock>,
    condenser: Vec<CondenserBlock>,
    head_norm: Affine,
    head_act: Activation,
    pool: GlobalAvgPool,
    fc: Linear,
}

impl Model {
    pub fn build(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let stem_act = cfg.activation(0);
        let stem_conv = match stem_act {
            ActivationKind::CRelu => cfg.stem_width() / 2,
            ActivationKind::Relu => cfg.stem_width(),
        };
        let stem = Stem::new(stem_conv, stem_act, &mut rng);
        let stages = cfg.stages();
        let n_blocks: usize = stages.iter().map(|s| s.blocks).sum();
        let branch_gain = 1.0 / (n_blocks as f64).sqrt();
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut cin = cfg.stem_width();
        for (k, st) in stages.iter().enumerate() {
            for j in 0..st.blocks {
                let spec = BlockSpec {
                    cin,
                    cout: st.width,
                    mid: st.mid,
                    stride: if j == 0 { st.stride } else { 1 },
                    act: cfg.activation(k + 1),
                    branch_gain,
                };
                blocks.push(ResBlock::new(k as u8 + 1, j, spec, &mut rng));
                cin = st.width;
            }
        }
        let condenser = (0..cfg.condenser_blocks).map(|_| CondenserBlock::new(cin, cfg.condenser_attention, &mut rng)).collect();
        let fc = Linear::new(cin, cfg.output_dim, &mut rng);

        let mut model = Self {
            cfg: cfg.clone(),
            input_scale: 1.0,
            ctx: StepContext::default(),
            stem,
            post_stem: DropoutSite::empty("post_stem"),
            blocks,
            condenser,
            head_norm: Affine::new(cin),
            head_act: Activation::new(ActivationKind::Relu),
            pool: GlobalAvgPool::new(),
            fc,
        };
        model.install_dropout(cfg);
        Ok(model)
    }

    fn install_dropout(&mut self, cfg: &ModelConfig) {
        let seed = cfg.seed;
        let mut stream = 1u64;
        for d in &cfg.dropout {
            if d.placement == Placement::PostStem {
                self.post_stem.push(d.clone(), 1.0, seed, stream);
                stream += 1;
                continue;
            }
            for b in &mut self.blocks {
                let layer = b.layer;
                if !d.layers.contains(&layer) {
                    continue;
                }
                let site = if d.placement == Placement::Inside { &mut b.inside } else { &mut b.outside };
                site.push(d.clone(), d.layer_multiplier(layer), seed, stream);
                stream += 1;
            }
        }
    }

    /// Names of every dropout site with at least one technique installed.
    pub fn active_sites(&self) -> Vec<(String, Vec<String>)> {
        std::iter::once(&self.post_stem)
            .chain(self.blocks.iter().flat_map(|b| [&b.inside, &b.outside]))
            .filter(|s| s.is_active())
            .map(|s| (s.name.clone(), s.labels()))
            .collect()
    }

    pub fn set_epoch(&mut self, epoch: u32, total_epochs: u32) {
        self.ctx = StepContext { epoch, total_epochs };
    }

    /// `[1, n, len]` input from row-major `f32` spectra, scaled.
    pub fn input_tensor(&self, spectra: &[f32], n: usize) -> Result<Tensor, ModelError> {
        let l = self.cfg.input_length;
        if spectra.len() != n * l {
            return Err(ModelError::Shape(format!("{} values for {n} spectra of length {l}", spectra.len())));
        }
        let s = self.input_scale;
        Ok(Tensor::new(1, n, l, spectra.iter().map(|&v| v as f64 * s).collect()))
    }

    /// Returns `[output_dim, batch, 1]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        self.run(x, mode, &mut Trace::default())
    }

    /// Forward pass that also fingerprints the activations after every stage
    /// and dropout site.
    pub fn forward_traced(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<TraceEntry>), ModelError> {
        let mut trace = Trace { enabled: true, entries: Vec::new() };
        let y = self.run(x, mode, &mut trace)?;
        Ok((y, trace.entries))
    }

    fn run(&mut self, x: &Tensor, mode: Mode, trace: &mut Trace) -> Result<Tensor, ModelError> {
        if x.channels != 1 || x.len != self.cfg.input_length {
            return Err(ModelError::Shape(format!(
                "input [{}, {}, {}], expected [B, 1, {}]",
                x.batch, x.channels, x.len, self.cfg.input_length
            )));
        }
        trace.record("input", x)?;
        let ctx = self.ctx;
        let mut h = self.stem.forward(x);
        trace.record("stem", &h)?;
        h = self.post_stem.forward(h, mode, ctx)?;
        trace.record("post_stem", &h)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode, ctx, trace)?;
        }
        for (i, c) in self.condenser.iter_mut().enumerate() {
            h = c.forward(&h);
            trace.record(&format!("condenser{i}"), &h)?;
        }
        let h = self.head_norm.forward(&h);
        let h = self.head_act.forward(&h);
        let h = self.pool.forward(&h);
        let y = self.fc.forward(&h);
        trace.record("head", &y)?;
        Ok(y)
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, grad_out: &Tensor) {
        let g = self.fc.backward(grad_out);
        let g = self.pool.backward(&g);
        let g = self.head_act.backward(&g);
        let mut g = self.head_norm.backward(&g);
        for c in self.condenser.iter_mut().rev() {
            g = c.backward(&g);
        }
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(g);
        }
        let g = self.post_stem.backward(g);
        self.stem.backward(&g);
    }

    /// Normalized-space outputs, row-major `[n, output_dim]`, in eval mode.
    pub fn predict_normalized(&mut self, spectra: &[f32], n: usize) -> Result<Vec<f64>, ModelError> {
        const CHUNK: usize = 256;
        let l = self.cfg.input_length;
        let mut out = Vec::with_capacity(n * self.cfg.output_dim);
        for start in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - start);
            let x = self.input_tensor(&spectra[start * l..(start + m) * l], m)?;
            let y = self.forward(&x, Mode::Eval)?;
            out.extend(to_rows(&y));
        }
        Ok(out)
    }
}

/// `[d, b, 1]` tensor to row-major `[b, d]`.
pub fn to_rows(y: &Tensor) -> Vec<f64> {
    let (d, b, _) = y.shape();
    let mut out = vec![0.0; d * b];
    for o in 0..d {
        for s in 0..b {
            out[s * d + o] = y.data[o * b + s];
        }
    }
    out
}

/// Row-major `[b, d]` to a `[d, b, 1]` tensor.
pub fn from_rows(rows: &[f64], b: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(d, b, 1);
    for s in 0..b {
        for o in 0..d {
            t.data[o * b + s] = rows[s * d + o];
        }
    }
    t
}

impl Module for Model {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit(f);
        for b in &mut self.blocks {
            b.visit(f);
        }
        for c in &mut self.condenser {
            c.visit(f);
        }
        self.head_norm.visit(f);
        self.fc.visit(f);
    }
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model, ModelError> {
    Model::build(cfg)
}
