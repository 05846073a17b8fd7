//! Dataset ingestion, batch runs, run-record persistence and evaluation.

mod dataset;
mod evaluate;
mod pipeline;
mod record;

pub use dataset::{load_dataset, parse_dataset, Dataset, FieldMapping, Split, SplitCounts};
pub use evaluate::{evaluate, EvalReport, Evaluation, QuestionScores};
pub use pipeline::{run_pipeline, run_question, Engine, Question, TimedRecord};
pub use record::{
    load_records, read_record, render_tree, write_records, BudgetLedger, Manifest, ManifestEntry, RunRecord,
    RunStatus,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{split} record {index}: field `{field}`: {message}")]
    Schema {
        split: String,
        index: usize,
        field: String,
        message: String,
    },
    #[error("no gold record for question ids: {}", .0.join(", "))]
    MissingGold(Vec<String>),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
