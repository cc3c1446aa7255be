//! Training runs, ablation matrices and report emission.

mod ablate;
mod config;
mod report;
mod svg;
mod train;

pub use ablate::{ablate, proposed, TABLE_COLUMNS, AblationMatrix, AblationOutcome, AblationRow, AblationTable, RowSpec, Trial, TrialResult};
pub use config::{DatasetSpec, DivergenceRule, Optimizer, RunConfig};
pub use report::{report_records, report_table, RunSummary};
pub use train::{
    dataset_sha256, evaluate_checkpoint, load_dataset, s_bar_map, train, train_on, Environment, Estimator, Histogram,
    LoggedSeries, RunRecord, RunStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Dropout(#[from] crate::dropout::DropoutError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Sim(crate::sim::SimError::Config(_)))
    }
}
