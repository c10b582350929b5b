//! Experiment orchestration: configs, training loops with best-validation
//! checkpointing, metrics files, overfitting diagnosis and plot data.

mod config;
mod metrics;
mod plot;
mod report;
mod run;

pub use config::{
    ClassificationBlock, DirectBlock, ExperimentConfig, LearnerKind, ModelBlock, SinusoidBlock,
    TaskKind,
};
pub use metrics::{read_csv, read_metrics, write_csv, EpisodeRow, MetricsRow, Split};
pub use plot::{
    adaptation_curve, emit_plot_data, learning_curve, AdaptationPoint, LearningPoint, PlotData,
    ADAPTATION_CURVE, LEARNING_CURVE, PLOT_DIR,
};
pub use report::{
    constant_trace, memorization_report, report_by_seed, Diagnosis, MemorizationReport,
    ReportThresholds,
};
pub use run::{
    build_learner, eval_set, evaluate_all, run_experiment, run_experiment_in, run_seed, seed_dir,
    MeanStd, RunOutcome, RunSummary, SeedRun, SeedStatus, SeedSummary, TaskData, TrainStream,
    CONFIG_SNAPSHOT, METRICS, SUMMARY, TEST_EPISODES,
};
