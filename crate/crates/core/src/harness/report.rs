use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{bar_plot, line_plot, Line};
use super::{AblationTable, HarnessError, RunRecord};

/// One line of `summary.json` / `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub status: String,
    pub best_epoch: Option<u32>,
    pub mape: Option<f64>,
    pub std: Option<f64>,
    pub r2: Option<f64>,
    /// S̄ of the validation MAPE curve.
    pub s_bar: Option<f64>,
    pub config_hash: String,
    pub dataset_sha256: String,
}

/// Display names, made unique by appending the seed and then an index.
fn run_names(records: &[RunRecord]) -> Vec<String> {
    let base: Vec<String> = records.iter().map(|r| r.config.label()).collect();
    let mut names: Vec<String> = base
        .iter()
        .zip(records)
        .map(|(b, r)| if base.iter().filter(|x| *x == b).count() > 1 { format!("{b} (seed {})", r.config.seed) } else { b.clone() })
        .collect();
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) {
            names[i] = format!("{} #{i}", names[i]);
        }
    }
    names
}

pub(crate) fn file_slug(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "na".into())
}

/// Writes curve plots, APE histograms and summaries for a set of runs.
/// Returns the files written, in write order.
pub fn report_records(records: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no run records to report".into()));
    }
    fs::create_dir_all(out)?;
    let names = run_names(records);
    let mut written = Vec::new();

    let keys: BTreeSet<(String, String)> =
        records.iter().flat_map(|r| r.series.iter().map(|s| (s.metric.clone(), s.split.clone()))).collect();
    for (metric, split) in &keys {
        let lines: Vec<Line> = records
            .iter()
            .zip(&names)
            .filter_map(|(r, name)| {
                let s = r.series(metric, split)?;
                let sb = s.s_bar().ok();
                Some(Line {
                    name,
                    points: s.epochs.iter().zip(&s.values).map(|(&e, &v)| (e as f64, v)).collect(),
                    attrs: sb.map(|v| vec![("data-s-bar", v.to_string())]).unwrap_or_default(),
                    note: sb.map(|v| format!("(S̄ = {v:.4})")),
                })
            })
            .collect();
        let svg = line_plot(&format!("{metric} ({split})"), "epoch", metric, &lines);
        let path = out.join(format!("curve_{}_{}.svg", file_slug(metric), split));
        fs::write(&path, svg)?;
        written.push(path);
    }

    for (r, name) in records.iter().zip(&names) {
        let Some(h) = &r.best_ape_histogram else { continue };
        let labels: Vec<String> = h
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| if i + 1 == h.edges.len() { format!("≥{e}") } else { format!("{e}") })
            .collect();
        let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
        let svg = bar_plot(&format!("APE at best epoch: {name}"), "absolute percent error (5% bins)", "count", &labels, &counts);
        let path = out.join(format!("ape_histogram_{}.svg", file_slug(name)));
        fs::write(&path, svg)?;
        written.push(path);
    }

    let summaries: Vec<RunSummary> = records
        .iter()
        .zip(&names)
        .map(|(r, name)| RunSummary {
            run: name.clone(),
            status: match &r.status {
                super::RunStatus::Completed => "completed".into(),
                super::RunStatus::Diverged { epoch, .. } => format!("diverged@{epoch}"),
            },
            best_epoch: r.best.as_ref().and_then(|b| b.best_epoch),
            mape: r.best.as_ref().map(|b| b.mape),
            std: r.best.as_ref().map(|b| b.std),
            r2: r.best.as_ref().map(|b| b.r2),
            s_bar: r.series("mape", "val").and_then(|s| s.s_bar().ok()),
            config_hash: r.config_hash.clone(),
            dataset_sha256: r.dataset_sha256.clone(),
        })
        .collect();
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_vec_pretty(&summaries)?)?;
    written.push(path);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "status", "best_epoch", "mape", "std", "r2", "s_bar", "config_hash", "dataset_sha256"])?;
    for s in &summaries {
        w.write_record([
            s.run.clone(),
            s.status.clone(),
            s.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "na".into()),
            opt(s.mape),
            opt(s.std),
            opt(s.r2),
            opt(s.s_bar),
            s.config_hash.clone(),
            s.dataset_sha256.clone(),
        ])?;
    }
    let path = out.join("summary.csv");
    fs::write(&path, w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?)?;
    written.push(path);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "epoch", "metric", "split", "value"])?;
    for (r, name) in records.iter().zip(&names) {
        for s in &r.series {
            for (e, v) in s.series.epochs.iter().zip(&s.series.values) {
                w.write_record([name.clone(), e.to_string(), s.metric.clone(), s.split.clone(), v.to_string()])?;
            }
        }
    }
    let path = out.join("series.csv");
    fs::write(&path, w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?)?;
    written.push(path);
    Ok(written)
}

/// Writes the table as CSV and markdown plus a MAPE bar chart.
pub fn report_table(table: &AblationTable, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let csv_path = out.join("ablation.csv");
    fs::write(&csv_path, table.to_csv()?)?;
    written.push(csv_path);
    let md = out.join("ablation.md");
    fs::write(&md, table.to_markdown())?;
    written.push(md);
    let labels: Vec<String> = table.rows.iter().map(|r| format!("{}: {}", r.group, r.label)).collect();
    let values: Vec<f64> = table.rows.iter().map(|r| r.mape.unwrap_or(f64::NAN)).collect();
    let svg = out.join("ablation_mape.svg");
    fs::write(&svg, bar_plot("best validation MAPE", "row", "MAPE (%)", &labels, &values))?;
    written.push(svg);
    Ok(written)
}
