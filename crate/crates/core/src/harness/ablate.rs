use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_dataset, train_on, HarnessError, RunConfig, RunRecord, RunStatus};
use crate::dropout::{DropoutConfig, Placement, Technique};
use crate::sim::{Dataset, VariantName};

/// Table header after the row identity columns.
pub const TABLE_COLUMNS: [&str; 6] = ["drop prob", "Epoch", "MAPE", "STD", "r²", "S̄"];
const NA: &str = "na";

/// One run of a row: the dropout setup and the rate label shown for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub drop_prob: String,
    #[serde(default)]
    pub dropout: Vec<DropoutConfig>,
    #[serde(default)]
    pub variant: Option<VariantName>,
}

/// A table row; its best trial by validation MAPE is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub group: String,
    pub label: String,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub rows: Vec<RowSpec>,
}

const RATES: [(f64, &str); 3] = [(0.10, "0.10"), (0.05, "0.05"), (0.025, "0.025")];

fn dc(p: f64) -> DropoutConfig {
    DropoutConfig::new(Technique::DropCluster, Placement::PostStem, p)
}

fn fad_i(p: f64) -> DropoutConfig {
    DropoutConfig::new(Technique::Fad, Placement::Inside, p)
}

fn wfad_o(p: f64) -> DropoutConfig {
    DropoutConfig::new(Technique::Wfad, Placement::Outside, p)
}

fn label_of(d: &[DropoutConfig]) -> String {
    d.iter().map(|x| x.label()).collect::<Vec<_>>().join(", ")
}

impl AblationMatrix {
    pub fn baseline_only() -> Self {
        Self { rows: vec![baseline_row("baseline", None)] }
    }

    /// Baseline, every technique alone at each rate, and the four
    /// combinations at their fixed rate pairs.
    pub fn table1() -> Self {
        let mut rows = vec![baseline_row("baseline", None)];
        let singles = [
            (Technique::DropCluster, Placement::PostStem),
            (Technique::Fad, Placement::Outside),
            (Technique::Wfd, Placement::Outside),
            (Technique::Wfad, Placement::Outside),
            (Technique::Fad, Placement::Inside),
            (Technique::Wfd, Placement::Inside),
            (Technique::Wfad, Placement::Inside),
        ];
        for (t, pl) in singles {
            let trials = RATES
                .iter()
                .map(|&(p, s)| Trial { drop_prob: s.into(), dropout: vec![DropoutConfig::new(t, pl, p)], variant: None })
                .collect();
            rows.push(RowSpec { group: "individual".into(), label: DropoutConfig::new(t, pl, 0.0).label(), trials });
        }
        let combos: [(Vec<DropoutConfig>, &str); 4] = [
            (vec![dc(0.10), wfad_o(0.05)], "0.10/0.05"),
            (vec![dc(0.10), fad_i(0.05)], "0.10/0.05"),
            (vec![fad_i(0.025), wfad_o(0.025)], "0.025"),
            (vec![dc(0.10), fad_i(0.025), wfad_o(0.025)], "0.10/0.025"),
        ];
        for (d, s) in combos {
            rows.push(RowSpec {
                group: "combination".into(),
                label: label_of(&d),
                trials: vec![Trial { drop_prob: s.into(), dropout: d, variant: None }],
            });
        }
        Self { rows }
    }

    /// Baseline against the three-technique combination on every task size.
    pub fn table2() -> Self {
        let mut rows = Vec::new();
        for v in VariantName::ALL {
            rows.push(baseline_row(&v.to_string(), Some(v)));
            rows.push(RowSpec {
                group: v.to_string(),
                label: "proposed".into(),
                trials: vec![Trial { drop_prob: "0.10/0.025".into(), dropout: proposed(), variant: Some(v) }],
            });
        }
        Self { rows }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            "table2" => Some(Self::table2()),
            "baseline" => Some(Self::baseline_only()),
            _ => None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn n_runs(&self) -> usize {
        self.rows.iter().map(|r| r.trials.len()).sum()
    }
}

/// `dC` at 0.10 with `FAD_I` and `wFAD_O` at 0.025.
pub fn proposed() -> Vec<DropoutConfig> {
    vec![dc(0.10), fad_i(0.025), wfad_o(0.025)]
}

fn baseline_row(group: &str, variant: Option<VariantName>) -> RowSpec {
    RowSpec {
        group: group.into(),
        label: "baseline".into(),
        trials: vec![Trial { drop_prob: "- -".into(), dropout: Vec::new(), variant }],
    }
}

/// One table line; `None` cells print as `na`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub label: String,
    pub drop_prob: String,
    pub epoch: Option<u32>,
    pub mape: Option<f64>,
    pub std: Option<f64>,
    pub r2: Option<f64>,
    pub s_bar: Option<f64>,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.mape.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| NA.into())
}

fn parse_cell<T: std::str::FromStr>(s: &str) -> Result<Option<T>, HarnessError> {
    if s == NA {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| HarnessError::Config(format!("bad table cell '{s}'")))
}

impl AblationTable {
    pub fn header() -> Vec<&'static str> {
        let mut h = vec!["group", "technique"];
        h.extend(TABLE_COLUMNS);
        h
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header())?;
        for r in &self.rows {
            w.write_record([
                r.group.clone(),
                r.label.clone(),
                r.drop_prob.clone(),
                cell(r.epoch),
                cell(r.mape),
                cell(r.std),
                cell(r.r2),
                cell(r.s_bar),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 table"))
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != Self::header() {
            return Err(HarnessError::Config(format!("unexpected table header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(AblationRow {
                group: rec[0].to_string(),
                label: rec[1].to_string(),
                drop_prob: rec[2].to_string(),
                epoch: parse_cell(&rec[3])?,
                mape: parse_cell(&rec[4])?,
                std: parse_cell(&rec[5])?,
                r2: parse_cell(&rec[6])?,
                s_bar: parse_cell(&rec[7])?,
            });
        }
        Ok(Self { rows })
    }

    /// Human-readable rendering rounded to two decimals.
    pub fn to_markdown(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| NA.into());
        let mut s = format!("| {} |\n|{}\n", Self::header().join(" | "), "---|".repeat(Self::header().len()));
        let mut last = String::new();
        for r in &self.rows {
            let g = if r.group == last { String::new() } else { r.group.clone() };
            last = r.group.clone();
            s += &format!(
                "| {g} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.label,
                r.drop_prob,
                r.epoch.map(|e| e.to_string()).unwrap_or_else(|| NA.into()),
                f(r.mape),
                f(r.std),
                f(r.r2),
                f(r.s_bar)
            );
        }
        s
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub group: String,
    pub label: String,
    pub drop_prob: String,
    pub status: String,
    pub best_epoch: Option<u32>,
    pub mape: Option<f64>,
    pub std: Option<f64>,
    pub r2: Option<f64>,
    /// S̄ of the validation MAPE curve.
    pub s_bar: Option<f64>,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub table: AblationTable,
    pub trials: Vec<TrialResult>,
}

fn slug(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}

fn trial_result(row: &RowSpec, t: &Trial, dir: &Path, r: Result<RunRecord, HarnessError>) -> TrialResult {
    let mut out = TrialResult {
        group: row.group.clone(),
        label: row.label.clone(),
        drop_prob: t.drop_prob.clone(),
        status: "completed".into(),
        best_epoch: None,
        mape: None,
        std: None,
        r2: None,
        s_bar: None,
        output_dir: dir.display().to_string(),
    };
    match r {
        Ok(rec) => {
            if let RunStatus::Diverged { epoch, reason } = &rec.status {
                out.status = format!("diverged at epoch {epoch}: {reason}");
                return out;
            }
            if let Some(b) = &rec.best {
                out.best_epoch = b.best_epoch;
                out.mape = Some(b.mape);
                out.std = Some(b.std);
                out.r2 = Some(b.r2);
                out.s_bar = rec.series("mape", "val").and_then(|s| s.s_bar().ok());
            } else {
                out.status = "no completed epoch".into();
            }
        }
        Err(e) => out.status = format!("failed: {e}"),
    }
    out
}

/// Runs every trial of `matrix` from `base` and assembles the table. Runs
/// that error or diverge become `na` cells; the run continues.
pub fn ablate(base: &RunConfig, matrix: &AblationMatrix) -> Result<AblationOutcome, HarnessError> {
    if matrix.rows.is_empty() || matrix.rows.iter().any(|r| r.trials.is_empty()) {
        return Err(HarnessError::Config("every ablation row needs at least one trial".into()));
    }
    let mut datasets: HashMap<VariantName, Dataset> = HashMap::new();
    let mut trials = Vec::new();
    let mut rows = Vec::new();
    for row in &matrix.rows {
        let mut results = Vec::new();
        for t in &row.trials {
            let mut cfg = base.clone();
            cfg.variant = t.variant.unwrap_or(base.variant);
            cfg.dropout = t.dropout.clone();
            cfg.p_max = None;
            cfg.name = Some(format!("{} / {} @ {}", row.group, row.label, t.drop_prob));
            let dir = base.output_dir.join(slug(&row.group)).join(slug(&row.label)).join(format!("p{}", slug(&t.drop_prob)));
            cfg.output_dir = dir.clone();
            let ds = match datasets.get(&cfg.variant) {
                Some(d) => Ok(d),
                None => {
                    let mut dcfg = base.clone();
                    dcfg.variant = cfg.variant;
                    if dcfg.variant != base.variant {
                        dcfg.dataset.path = None;
                    }
                    load_dataset(&dcfg).map(|d| &*datasets.entry(cfg.variant).or_insert(d))
                }
            };
            let r = ds.and_then(|d| train_on(&cfg, d));
            let res = trial_result(row, t, &dir, r);
            log::info!("{} / {} @ {}: {}", row.group, row.label, t.drop_prob, res.status);
            results.push(res);
        }
        let best = results
            .iter()
            .filter(|r| r.mape.is_some())
            .min_by(|a, b| a.mape.partial_cmp(&b.mape).expect("finite MAPE"));
        rows.push(match best {
            Some(b) => AblationRow {
                group: row.group.clone(),
                label: row.label.clone(),
                drop_prob: b.drop_prob.clone(),
                epoch: b.best_epoch,
                mape: b.mape,
                std: b.std,
                r2: b.r2,
                s_bar: b.s_bar,
            },
            None => AblationRow {
                group: row.group.clone(),
                label: row.label.clone(),
                drop_prob: if results.len() > 1 { "all".into() } else { results[0].drop_prob.clone() },
                epoch: None,
                mape: None,
                std: None,
                r2: None,
                s_bar: None,
            },
        });
        trials.extend(results);
    }
    let outcome = AblationOutcome { table: AblationTable { rows }, trials };
    write_outcome(&outcome, &base.output_dir)?;
    Ok(outcome)
}

pub(crate) fn write_outcome(o: &AblationOutcome, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.csv"), o.table.to_csv()?)?;
    fs::write(dir.join("ablation.json"), serde_json::to_vec_pretty(o)?)?;
    fs::write(dir.join("ablation.md"), o.table.to_markdown())?;
    Ok(())
}
