//! Orchestration of full evaluation runs and their artifacts.

mod claims;
mod config;
mod failures;
mod report;
mod run;

pub use claims::{consistency_check, CheckSummary, Claim, ClaimFile, ClaimMetric, ClaimOutcome, Verdict};
pub use config::{MetricsSettings, RunConfig, SCHEMA_VERSION};
pub use failures::{export_failures, select_failures, FailureCase};
pub use report::{
    emit_report, improvement_rows, render_csv, render_json, render_markdown, Cell, CellGap, FailureEntry,
    ImprovementRow, ReportFormat, RunMetadata, RunReport, TargetRecord, REPORT_SCHEMA_VERSION,
};
pub use run::{run, run_with, write_outputs, RunContext, RunOutcome, Transports};
