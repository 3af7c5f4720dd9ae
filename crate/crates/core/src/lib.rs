//! Audit the CPU corepower that grid queues declare against the corepower
//! measured by benchmark runs inside production job slots.
//!
//! The pipeline is: [`ingest`] the benchmark, job-accounting and registry
//! streams; weight each queue's CPU models by walltime × cores and compare
//! the weighted runtime corepower with the declared value ([`corepower`]);
//! optionally restrict to fully loaded hosts ([`loadstats`]); summarize and
//! emit reports ([`audit`], [`anonymize`], [`plot`]). [`fleetsim`] generates
//! synthetic fleets with known ground truth.

pub mod anonymize;
pub mod audit;
pub mod corepower;
pub mod error;
pub mod fleetsim;
pub mod ingest;
pub mod loadstats;
pub mod model;
pub mod plot;

pub use audit::{run_audit, AuditInputs, AuditMode, AuditOptions, AuditReport, AuditRow, RowStatus};
pub use corepower::{CompletenessPolicy, Threshold};
pub use error::{AnalysisError, IngestError, ModelError, ReportError, SimError};
pub use loadstats::LoadBand;
pub use model::{
    BenchmarkRecord, Classification, CpuModelId, DeclaredEntry, JobRecord, QueueAudit, QueueId,
};
