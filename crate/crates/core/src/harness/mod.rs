//! Corpus handling, splitting, configuration and the end-to-end experiment
//! runner behind the command-line tool.

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod report;
pub mod split;
pub mod synth;

pub use config::{ExperimentConfig, ModelConfig};
pub use corpus::{normalize_text, split_sentences, Corpus};
pub use experiment::{
    bounds_for, detect_model, evaluate, prepare, run_experiment, run_unlearning, train_baseline,
    train_gold, write_atomic, ModelMetrics, ModelSummary, PreparedData, RunSummary,
};
pub use report::{build_report, write_report, ReportTables};
pub use split::{make_split, SplitMode, SplitSpec};
