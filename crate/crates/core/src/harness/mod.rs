//! Experiment runner, metrics, reports and the selftest suite.

mod compare;
mod config;
mod experiment;
mod metrics;
mod selftest;

pub use compare::{compression_summary, improvement, CompressionSummary};
pub use config::{modality_tag, ArchConfig, ExperimentConfig, StudentRole, TEACHER_ID, TEACHER_SELFKD_ID};
pub use experiment::{
    emit_fig3_table, execute, exit_code, run_experiment, Execution, ExperimentReport, MetricRow, ModelRow, RunLedger,
    SummaryRow, EXIT_CONFIG, EXIT_RUNTIME, FIG3_ROLES, GLOBAL_NODE, POOLED_NODE,
};
pub use metrics::{evaluate, evaluate_inputs, topk_accuracy, Evaluation};
pub use selftest::{selftest, Check};
