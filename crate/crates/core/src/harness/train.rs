use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::dropout::{Mode, ScheduleState};
use crate::loss::{compute_lambdas, total_loss_with_grad, LossGroups};
use crate::metrics::{self, EvalReport, MetricSeries, Predictor};
use crate::model::{from_rows, load_checkpoint, save_checkpoint, to_rows, Model, ModelError};
use crate::nn::{Adam, AdamConfig, Module, Tensor};
use crate::sim::{generate_dataset, read_dataset, Dataset, TaskVariant, OUTPUT_LEN};

/// Stream offset of the shuffling RNG, clear of every dropout stream.
const SHUFFLE_STREAM: u64 = 1 << 32;

/// A model plus the schema it predicts, mapping spectra to physical units.
pub struct Estimator {
    pub model: Model,
    pub variant: TaskVariant,
}

impl Estimator {
    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        let p = self.variant.len();
        normalized.iter().enumerate().map(|(k, &u)| self.variant.schema[k % p].bounds.denormalize(u)).collect()
    }

    pub fn load(weights: &Path, variant: TaskVariant) -> Result<(Self, u32), HarnessError> {
        let (model, meta) = load_checkpoint(weights)?;
        if model.cfg.output_dim != variant.len() {
            return Err(HarnessError::Config(format!(
                "checkpoint emits {} values, {} schema has {}",
                model.cfg.output_dim,
                variant.name,
                variant.len()
            )));
        }
        Ok((Self { model, variant }, meta.epoch))
    }
}

impl Predictor for Estimator {
    fn predict(&mut self, spectra: &[f32], n: usize) -> anyhow::Result<Vec<f64>> {
        let u = self.model.predict_normalized(spectra, n)?;
        Ok(self.denormalize(&u))
    }
}

/// One logged curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSeries {
    pub metric: String,
    pub split: String,
    pub series: MetricSeries,
}

impl LoggedSeries {
    pub fn key(&self) -> String {
        format!("{}/{}", self.metric, self.split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: u32, reason: String },
}

/// Fixed-edge histogram of absolute percent errors; the last bin is open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of_ape(values: &[f64]) -> Self {
        let edges: Vec<f64> = (0..=40).map(|k| 5.0 * k as f64).collect();
        let mut counts = vec![0u64; edges.len()];
        for &v in values {
            let bin = ((v / 5.0).floor() as usize).min(edges.len() - 1);
            counts[bin] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub toolkit_version: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub dataset_sha256: String,
    pub status: RunStatus,
    pub series: Vec<LoggedSeries>,
    /// Validation report of the best epoch, with S̄ of every logged curve.
    pub best: Option<EvalReport>,
    pub best_ape_histogram: Option<Histogram>,
    pub wall_clock_secs: f64,
    pub environment: Environment,
    pub output_dir: PathBuf,
}

impl RunRecord {
    pub fn series(&self, metric: &str, split: &str) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.metric == metric && s.split == split).map(|s| &s.series)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("record.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Reads `record.json` from a run directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let file = if path.is_dir() { path.join("record.json") } else { path.to_path_buf() };
        Ok(serde_json::from_slice(&fs::read(&file)?)?)
    }
}

/// Append-only `(epoch, metric, split, value)` log mirrored to CSV.
struct MetricLog {
    file: fs::File,
    series: Vec<LoggedSeries>,
}

impl MetricLog {
    fn create(path: &Path) -> Result<Self, HarnessError> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "epoch,metric,split,value")?;
        Ok(Self { file, series: Vec::new() })
    }

    fn push(&mut self, epoch: u32, metric: &str, split: &str, value: f64) -> Result<(), HarnessError> {
        writeln!(self.file, "{epoch},{metric},{split},{value}")?;
        let idx = match self.series.iter().position(|s| s.metric == metric && s.split == split) {
            Some(i) => i,
            None => {
                self.series.push(LoggedSeries {
                    metric: metric.into(),
                    split: split.into(),
                    series: MetricSeries::new(format!("{metric}/{split}")),
                });
                self.series.len() - 1
            }
        };
        // Non-finite values reach the CSV but not the series.
        if value.is_finite() {
            self.series[idx].series.push(epoch, value).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, HarnessError> {
    let v = TaskVariant::new(cfg.variant);
    let ds = match &cfg.dataset.path {
        Some(p) => read_dataset(p)?,
        None => generate_dataset(&v, cfg.dataset.n, cfg.dataset.seed, cfg.dataset.split)?,
    };
    Ok(ds)
}

pub fn dataset_sha256(ds: &Dataset) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in ds.spectra.iter().chain(&ds.targets) {
        h.update(v.to_le_bytes());
    }
    h.update(ds.n_train.to_le_bytes());
    hex::encode(h.finalize())
}

pub fn train(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    train_on(cfg, &ds)
}

/// Population std over the training spectra; inputs are divided by it.
fn input_scale(ds: &Dataset) -> f64 {
    let xs = &ds.spectra[..ds.n_train * OUTPUT_LEN];
    let (_, var) = metrics::mean_var(&xs.iter().map(|&v| v as f64).collect::<Vec<_>>());
    if var > 0.0 {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}

enum Step {
    Ok(f64),
    Diverged(String),
}

fn train_batch(
    model: &mut Model,
    opt: &mut Adam,
    ds: &Dataset,
    norm_targets: &[f64],
    rows: &[usize],
    groups: &LossGroups,
    lambdas: &[f64],
) -> Result<Step, HarnessError> {
    let p = ds.n_params();
    let b = rows.len();
    let s = model.input_scale;
    let mut x = Vec::with_capacity(b * OUTPUT_LEN);
    let mut t = Vec::with_capacity(b * p);
    for &r in rows {
        x.extend(ds.spectrum(r).iter().map(|&v| v as f64 * s));
        t.extend_from_slice(&norm_targets[r * p..(r + 1) * p]);
    }
    let x = Tensor::new(1, b, OUTPUT_LEN, x);
    model.zero_grad();
    let y = match model.forward(&x, Mode::Train) {
        Ok(y) => y,
        Err(ModelError::NonFinite { site }) => return Ok(Step::Diverged(format!("non-finite activations at {site}"))),
        Err(e) => return Err(e.into()),
    };
    let pred = to_rows(&y);
    let (loss, grad) = total_loss_with_grad(&pred, &t, groups, lambdas)?;
    if !loss.is_finite() {
        return Ok(Step::Diverged("non-finite training loss".into()));
    }
    model.backward(&from_rows(&grad, b, p));
    opt.step(model);
    Ok(Step::Ok(loss))
}

pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    if ds.variant.name != cfg.variant {
        return Err(HarnessError::Config(format!("dataset holds {}, run expects {}", ds.variant.name, cfg.variant)));
    }
    if ds.n_train == 0 || ds.n_train == ds.n {
        return Err(HarnessError::Config("dataset needs both training and validation rows".into()));
    }
    let started = Instant::now();
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let variant = ds.variant.clone();
    let p = variant.len();
    let norm_targets: Vec<f64> =
        ds.targets.iter().enumerate().map(|(k, &v)| variant.schema[k % p].bounds.normalize(v as f64)).collect();
    let val = ds.val_indices();
    let val_norm = &norm_targets[val.start * p..val.end * p];
    let val_phys: Vec<f64> = ds.targets[val.start * p..val.end * p].iter().map(|&v| v as f64).collect();
    let val_spectra = &ds.spectra[val.start * OUTPUT_LEN..val.end * OUTPUT_LEN];

    let mut model = Model::build(&cfg.model_config())?;
    model.input_scale = input_scale(ds);
    let mut est = Estimator { model, variant: variant.clone() };
    let mut opt = Adam::new(AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
    let mut groups = LossGroups::for_variant(&variant);
    groups.pen_min = cfg.pen_min;
    groups.s_bar_scaling = cfg.s_bar_scaling;
    let lambdas_for = |g: &LossGroups, epoch: u32| -> Result<Vec<f64>, HarnessError> {
        if cfg.adaptive_loss {
            Ok(compute_lambdas(g, epoch)?)
        } else {
            Ok(vec![0.0; g.groups.len()])
        }
    };
    let mut lambdas = lambdas_for(&groups, 0)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = ds.train_indices().collect();
    let dropout = cfg.effective_dropout();

    let mut log = MetricLog::create(&out.join("metrics.csv"))?;
    let mut status = RunStatus::Completed;
    let mut best: Option<(f64, EvalReport, Vec<f64>)> = None;
    let mut first_mape = None;
    let mut strikes = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        est.model.set_epoch(epoch, cfg.epochs);
        for (g, l) in groups.groups.iter().zip(&lambdas) {
            log.push(epoch, &format!("lambda.{}", g.kind.as_str()), "train", *l)?;
        }
        for d in &dropout {
            let l = ScheduleState::new(epoch, cfg.epochs, d.activation_epoch).lambda()?;
            log.push(epoch, &format!("lambda_sched.{}", d.label()), "train", l)?;
        }

        order.shuffle(&mut shuffle);
        let (mut sum, mut seen) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size) {
            match train_batch(&mut est.model, &mut opt, ds, &norm_targets, rows, &groups, &lambdas)? {
                Step::Ok(l) => {
                    sum += l * rows.len() as f64;
                    seen += rows.len();
                }
                Step::Diverged(reason) => {
                    log.push(epoch, "loss", "train", f64::NAN)?;
                    status = RunStatus::Diverged { epoch, reason };
                    break 'epochs;
                }
            }
        }
        log.push(epoch, "loss", "train", sum / seen as f64)?;

        let pred_norm = match est.model.predict_normalized(val_spectra, val.len()) {
            Ok(y) => y,
            Err(ModelError::NonFinite { site }) => {
                status = RunStatus::Diverged { epoch, reason: format!("non-finite validation activations at {site}") };
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let (val_loss, _) = total_loss_with_grad(&pred_norm, val_norm, &groups, &lambdas)?;
        log.push(epoch, "loss", "val", val_loss)?;
        let pred_phys = est.denormalize(&pred_norm);
        let report = metrics::report_from_predictions(&variant, &pred_phys, &val_phys)?;
        log.push(epoch, "mape", "val", report.mape)?;
        log.push(epoch, "std", "val", report.std)?;
        log.push(epoch, "r2", "val", report.r2)?;
        for m in &report.per_metabolite {
            log.push(epoch, &format!("mape.{}", m.name), "val", m.mape)?;
        }
        if let Err(e) = groups.update_stats(epoch, &pred_norm, val_norm) {
            status = RunStatus::Diverged { epoch, reason: e.to_string() };
            break;
        }
        for g in &groups.groups {
            let k = g.kind.as_str();
            log.push(epoch, &format!("group_err.{k}"), "val", g.history.values[g.history.len() - 1])?;
            log.push(epoch, &format!("group_r.{k}"), "val", g.r)?;
            log.push(epoch, &format!("group_r2.{k}"), "val", g.r2)?;
        }
        log::info!(
            "{} epoch {epoch}/{}: train {:.5} val {:.5} MAPE {:.3} STD {:.3} r2 {:.4}",
            cfg.label(),
            cfg.epochs,
            sum / seen as f64,
            val_loss,
            report.mape,
            report.std,
            report.r2
        );

        if !report.mape.is_finite() || !val_loss.is_finite() {
            status = RunStatus::Diverged { epoch, reason: "non-finite validation metrics".into() };
            break;
        }
        let f = *first_mape.get_or_insert(report.mape);
        strikes = if report.mape > cfg.divergence.factor * f { strikes + 1 } else { 0 };

        let snapshot = serde_json::json!({ "mape": report.mape, "std": report.std, "r2": report.r2 });
        save_checkpoint(&mut est.model, &out.join("last.weights"), epoch, snapshot.clone())?;
        if best.as_ref().is_none_or(|(m, _, _)| report.mape < *m) {
            save_checkpoint(&mut est.model, &out.join("best.weights"), epoch, snapshot)?;
            let (ape, _) = metrics::absolute_percent_errors(&amplitudes(&variant, &pred_phys), &amplitudes(&variant, &val_phys))?;
            let mut r = report.clone();
            r.best_epoch = Some(epoch);
            best = Some((report.mape, r, ape));
        }
        if strikes >= cfg.divergence.patience {
            status = RunStatus::Diverged {
                epoch,
                reason: format!(
                    "validation MAPE above {}x its first-epoch value for {} epochs",
                    cfg.divergence.factor, cfg.divergence.patience
                ),
            };
            break;
        }
        lambdas = lambdas_for(&groups, epoch)?;
    }
    log.file.flush()?;

    let series = log.series;
    let best_report = best.as_ref().map(|(_, r, _)| {
        let mut r = r.clone();
        r.s_bar = s_bar_map(&series);
        r
    });
    let record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_sha256: dataset_sha256(ds),
        status: status.clone(),
        series,
        best: best_report.clone(),
        best_ape_histogram: best.as_ref().map(|(_, _, ape)| Histogram::of_ape(ape)),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        environment: Environment::current(),
        output_dir: out.clone(),
    };
    if let RunStatus::Diverged { epoch, reason } = &status {
        log::warn!("{} diverged at epoch {epoch}: {reason}", cfg.label());
        let last_good = out.join("last.weights");
        let body = serde_json::json!({
            "epoch": epoch,
            "reason": reason,
            "last_good_checkpoint": last_good.exists().then_some(last_good),
        });
        fs::write(out.join("divergence.json"), serde_json::to_vec_pretty(&body)?)?;
    }
    if let Some(r) = &best_report {
        fs::write(out.join("eval_report.json"), serde_json::to_vec_pretty(r)?)?;
    }
    record.save(&out)?;
    Ok(record)
}

/// Amplitude columns of row-major `[n, p]` values, flattened.
fn amplitudes(v: &TaskVariant, rows: &[f64]) -> Vec<f64> {
    let p = v.len();
    let amps = v.amplitude_indices();
    rows.chunks(p).flat_map(|r| amps.iter().map(|&i| r[i]).collect::<Vec<_>>()).collect()
}

/// S̄ of every logged curve long enough to have one.
pub fn s_bar_map(series: &[LoggedSeries]) -> BTreeMap<String, f64> {
    series.iter().filter_map(|s| s.series.s_bar().ok().map(|v| (s.key(), v))).collect()
}

/// Validation report of a saved checkpoint on `ds`.
pub fn evaluate_checkpoint(weights: &Path, ds: &Dataset) -> Result<EvalReport, HarnessError> {
    let (mut est, epoch) = Estimator::load(weights, ds.variant.clone())?;
    let mut r = metrics::evaluate(&mut est, ds, ds.val_indices())?;
    r.best_epoch = Some(epoch);
    Ok(r)
}
