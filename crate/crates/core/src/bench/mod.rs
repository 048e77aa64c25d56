//! Suite execution, metrics and reports.

pub mod annotation;
pub mod metrics;
pub mod report;
pub mod run;
pub mod suite;

pub use annotation::{case_id, latest_wins, load_annotations, AnnotationError, AnnotationRecord};
pub use metrics::{
    compute_afs, compute_bws, compute_pps, compute_tsr, surrogate_pps, AfsMode, AfsOutcome, MetricError, PpsSource,
};
pub use report::{
    group_cases, load_traces, write_report, Case, CellMetrics, MetricsReport, PolicyRow, PpsKind, ReportError,
    ReportOptions,
};
pub use run::{
    noise_label, run_suite, scripted_factory, trace_path, CellError, CognitionFactory, SuiteError, SuiteOutcome,
    SuiteRun, SuiteTask,
};
pub use suite::{desk_suite, load_suite, LoadedSuite, NoiseSetting, SuiteSpec, SuiteSpecError};
