//! Experiment configuration, the pipeline steps behind the CLI, and the
//! trace-derived reports.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{CorpusConfig, EvalConfig, ExperimentConfig};
pub use pipeline::{
    collect_traces, eval_classifier_step, evaluate_step, evasion_curve, gen_corpus, load_agent, load_classifier,
    load_experiment_corpus, manifest_summary, report_step, train_agent_step, train_classifier_step, AgentRun,
    ClassifierRun, FamilyCounts, EVASION_WINDOW,
};
pub use report::{
    family_reports, insertion_reduction, read_traces, render_markdown, reports_to_csv, series, summarize,
    traces_to_jsonl, AgentKind, FamilyReport, OverallAccuracy, Series, Summary, TraceRecord,
};
