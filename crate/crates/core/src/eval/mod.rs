//! Metrics, cross-validation and the experiment harness.

pub mod cv;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use cv::{cross_validate, log2_grid, stratified_folds, CvOutcome, CvPlan, GridScore};
pub use experiment::{
    classify_all, compute_kernels, prepare_split, run_pipeline, run_window_experiment, FittedKernel,
    KernelPair, KernelSpec, ModelArtifact, MethodResult, PipelineOptions, PipelineRun, PrepareOptions, Prepared,
    WindowReport, WindowResult,
};
pub use metrics::{confusion_metrics, Confusion, MetricTriple};
