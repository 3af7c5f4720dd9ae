use std::io;

use thiserror::Error;

use crate::model::QueueId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("empty cpu_model")]
    EmptyCpuModel,
    #[error("empty site")]
    EmptySite,
    #[error("empty queue")]
    EmptyQueue,
    #[error("{0}")]
    Invariant(&'static str),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    Io(#[from] io::Error),
    #[error("malformed registry: {0}")]
    Csv(#[from] csv::Error),
    #[error("registry header must be `{expected}`, found `{found}`")]
    Header { expected: &'static str, found: String },
    #[error("duplicate registry entry for queue {0}")]
    DuplicateQueue(QueueId),
}

/// Reasons a queue or a statistic cannot be computed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("no accounting data")]
    NoAccountingData,
    #[error("no benchmark coverage")]
    NoBenchmarkCoverage,
    #[error("declared corepower unavailable")]
    DeclaredUnavailable,
    #[error("no fully-loaded measurements")]
    NoFullyLoadedMeasurements,
    #[error("no auditable queues")]
    NoAuditableQueues,
    #[error("insufficient variation")]
    InsufficientVariation,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid fleet config: {0}")]
    InvalidConfig(String),
    #[error("declared-value clone cycle through queue {0}")]
    CloneCycle(QueueId),
    #[error("queue {0} clones an unknown source queue")]
    UnknownCloneSource(QueueId),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no auditable queues")]
    NoAuditableQueues,
    #[error("anonymization salt must not be empty")]
    EmptySalt,
    #[error("anonymized label collision between sites `{0}` and `{1}`")]
    LabelCollision(String, String),
    #[error("report has no rows")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
