use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use specdrop_core::dropout::DropoutConfig;
use specdrop_core::harness::{
    ablate, dataset_sha256, load_dataset, report_records, report_table, train, AblationMatrix, AblationTable,
    HarnessError, RunConfig, RunRecord, RunStatus,
};
use specdrop_core::model::Preset;
use specdrop_core::sim::{write_dataset, VariantName};

/// Relative output paths resolve against this directory when it is set.
const OUTPUT_ROOT_VAR: &str = "SPECDROP_OUTPUT_ROOT";

const EXIT_DIVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "specdrop", version, about = "Simulate MRS spectra, train quantification CNNs, run dropout ablations")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset file.
    Simulate(SimulateArgs),
    /// Train one model.
    Train(RunArgs),
    /// Run an ablation matrix and write the results table.
    Ablate(AblateArgs),
    /// Plot and summarize finished runs or an ablation table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Run config (TOML); its `variant` and `[dataset]` section are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<VariantName>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training fraction.
    #[arg(long)]
    split: Option<f64>,
    /// Dataset file to write; defaults to `<variant>.sdset`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML). Flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<VariantName>,
    #[arg(long)]
    preset: Option<Preset>,
    /// Model and dropout seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Replaces the rate of every dropout entry.
    #[arg(long)]
    p_max: Option<f64>,
    /// Dropout entry as LABEL@RATE (e.g. `wFAD_O@0.05`); repeatable, replaces the config list.
    #[arg(long = "dropout", value_name = "LABEL@RATE")]
    dropout: Vec<DropoutConfig>,
    /// Existing dataset file instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of spectra to generate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    condenser_blocks: Option<usize>,
    /// Plain MSE instead of the group-weighted loss.
    #[arg(long)]
    no_adaptive_loss: bool,
    /// 125,000 spectra, the 50-layer preset and 100 epochs (before other overrides).
    #[arg(long)]
    full_scale: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `table1`, `table2`, `baseline`, or a TOML matrix file.
    #[arg(long, default_value = "table1")]
    matrix: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Report config (TOML) with `runs`, `table` and `out` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directories or `record.json` files; directories are searched recursively.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Ablation CSV to render.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    #[serde(default)]
    runs: Vec<PathBuf>,
    table: Option<PathBuf>,
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Diverged(String),
    Other(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Other(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn base_config(config: Option<&Path>, variant: Option<VariantName>) -> Result<RunConfig, Failure> {
    match config {
        Some(p) => {
            let mut c = RunConfig::load(p)?;
            if let Some(v) = variant {
                c.variant = v;
            }
            Ok(c)
        }
        None => variant
            .map(RunConfig::new)
            .ok_or_else(|| Failure::Config("give --config or --variant".into())),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = base_config(self.config.as_deref(), self.variant)?;
        if self.full_scale {
            c = c.full_scale();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            preset => preset,
            seed => seed,
            epochs => epochs,
            batch_size => batch_size,
            lr => learning_rate,
            n => dataset.n,
            data_seed => dataset.seed,
            split => dataset.split,
            condenser_blocks => condenser_blocks,
            out => output_dir,
        );
        if self.p_max.is_some() {
            c.p_max = self.p_max;
        }
        if !self.dropout.is_empty() {
            c.dropout = self.dropout.clone();
        }
        if let Some(d) = &self.dataset {
            c.dataset.path = Some(d.clone());
        }
        if self.no_adaptive_loss {
            c.adaptive_loss = false;
        }
        c.output_dir = output_path(&c.output_dir);
        c.validate()?;
        Ok(c)
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut c = base_config(a.config.as_deref(), a.variant)?;
    c.dataset.path = None;
    if let Some(n) = a.n {
        c.dataset.n = n;
    }
    if let Some(s) = a.seed {
        c.dataset.seed = s;
    }
    if let Some(s) = a.split {
        c.dataset.split = s;
    }
    if c.dataset.n == 0 || !(0.0..=1.0).contains(&c.dataset.split) {
        return Err(Failure::Config(format!("n = {} with split {} is not a dataset", c.dataset.n, c.dataset.split)));
    }
    let out = output_path(&a.out.unwrap_or_else(|| PathBuf::from(format!("{}.sdset", c.variant))));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let ds = load_dataset(&c)?;
    write_dataset(&ds, &out).map_err(HarnessError::from)?;
    let summary = serde_json::json!({
        "path": out,
        "variant": c.variant,
        "n": ds.n,
        "n_train": ds.n_train,
        "seed": ds.seed,
        "sha256": dataset_sha256(&ds),
    });
    println!("{summary}");
    Ok(())
}

fn run_summary(r: &RunRecord) -> serde_json::Value {
    serde_json::json!({
        "label": r.config.label(),
        "status": r.status,
        "best_epoch": r.best.as_ref().and_then(|b| b.best_epoch),
        "mape": r.best.as_ref().map(|b| b.mape),
        "std": r.best.as_ref().map(|b| b.std),
        "r2": r.best.as_ref().map(|b| b.r2),
        "output_dir": r.output_dir,
    })
}

fn train_cmd(a: RunArgs) -> Result<(), Failure> {
    let cfg = a.resolve()?;
    let rec = train(&cfg)?;
    println!("{}", run_summary(&rec));
    match rec.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Diverged { epoch, reason } => Err(Failure::Diverged(format!("diverged at epoch {epoch}: {reason}"))),
    }
}

fn ablate_cmd(a: AblateArgs) -> Result<(), Failure> {
    let cfg = a.run.resolve()?;
    let matrix = match AblationMatrix::by_name(&a.matrix) {
        Some(m) => m,
        None => {
            let text = std::fs::read_to_string(&a.matrix)
                .map_err(|e| Failure::Config(format!("matrix '{}': {e}", a.matrix)))?;
            AblationMatrix::from_toml_str(&text)?
        }
    };
    log::info!("{} rows, {} runs", matrix.rows.len(), matrix.n_runs());
    let out = ablate(&cfg, &matrix)?;
    print!("{}", out.table.to_markdown());
    Ok(())
}

fn find_records(p: &Path, acc: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if p.is_file() {
        acc.push(p.to_path_buf());
        return Ok(());
    }
    let rec = p.join("record.json");
    if rec.is_file() {
        acc.push(rec);
    }
    let mut dirs: Vec<PathBuf> =
        std::fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|q| q.is_dir()).collect();
    dirs.sort();
    for d in dirs {
        find_records(&d, acc)?;
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<(), Failure> {
    let mut rc = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<ReportConfig>(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => ReportConfig::default(),
    };
    if !a.runs.is_empty() {
        rc.runs = a.runs;
    }
    if a.table.is_some() {
        rc.table = a.table;
    }
    if a.out.is_some() {
        rc.out = a.out;
    }
    if rc.runs.is_empty() && rc.table.is_none() {
        return Err(Failure::Config("nothing to report: give --runs or --table".into()));
    }
    let out = output_path(&rc.out.unwrap_or_else(|| PathBuf::from("report")));
    let mut written = Vec::new();
    if !rc.runs.is_empty() {
        let mut files = Vec::new();
        for r in &rc.runs {
            if !r.exists() {
                return Err(Failure::Config(format!("{} does not exist", r.display())));
            }
            find_records(r, &mut files)?;
        }
        if files.is_empty() {
            return Err(Failure::Config("no record.json under the given runs".into()));
        }
        let records = files.iter().map(|f| RunRecord::load(f)).collect::<Result<Vec<_>, _>>()?;
        written.extend(report_records(&records, &out)?);
    }
    if let Some(t) = &rc.table {
        let text = std::fs::read_to_string(t).map_err(|e| Failure::Config(format!("{}: {e}", t.display())))?;
        written.extend(report_table(&AblationTable::from_csv(&text)?, &out)?);
    }
    for f in written {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let r = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Ablate(a) => ablate_cmd(a),
        Cmd::Report(a) => report_cmd(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
