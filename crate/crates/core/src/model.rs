//! Domain types shared by every analysis stage.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Canonical CPU model name.
///
/// Built either through [`CpuModelId::normalize`] (the default matching mode)
/// or [`CpuModelId::exact`] (trimmed raw string, for strict matching).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CpuModelId(String);

static FREQUENCY_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@?\s*\d+(?:\.\d+)?\s*[gm]hz\b").unwrap());

const TRADEMARK_GLYPHS: [&str; 4] = ["(r)", "(tm)", "®", "™"];

fn normalize_pass(s: &str) -> String {
    let mut out = s.to_string();
    for glyph in TRADEMARK_GLYPHS {
        out = out.replace(glyph, " ");
    }
    let out = FREQUENCY_SUFFIX.replace_all(&out, " ");
    out.split_whitespace()
        .filter(|tok| *tok != "cpu" && *tok != "@")
        .collect::<Vec<_>>()
        .join(" ")
}

impl CpuModelId {
    /// Canonicalize a raw CPU model string.
    ///
    /// Case-folds, strips trademark glyphs, the word `CPU` and frequency
    /// suffixes such as `@ 2.20GHz`, and collapses whitespace. Every pass
    /// either leaves the string unchanged or makes it strictly shorter, so
    /// iterating to a fixpoint terminates and makes the result idempotent.
    pub fn normalize(raw: &str) -> Result<Self, ModelError> {
        let mut current = raw.trim().to_lowercase();
        loop {
            let next = normalize_pass(&current);
            if next == current {
                break;
            }
            current = next;
        }
        if current.is_empty() {
            return Err(ModelError::EmptyCpuModel);
        }
        Ok(CpuModelId(current))
    }

    /// Strict mode: the trimmed raw string is the identity.
    pub fn exact(raw: &str) -> Result<Self, ModelError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyCpuModel);
        }
        Ok(CpuModelId(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CpuModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A PanDA-style queue, keyed by site and queue name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueueId {
    pub site: String,
    pub queue: String,
}

impl QueueId {
    pub fn new(site: &str, queue: &str) -> Result<Self, ModelError> {
        let site = site.trim();
        let queue = queue.trim();
        if site.is_empty() {
            return Err(ModelError::EmptySite);
        }
        if queue.is_empty() {
            return Err(ModelError::EmptyQueue);
        }
        Ok(QueueId {
            site: site.to_string(),
            queue: queue.to_string(),
        })
    }

    /// `site/queue`, used as a plot label.
    pub fn label(&self) -> String {
        format!("{}/{}", self.site, self.queue)
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.site, self.queue)
    }
}

/// One benchmark run inside one production job slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub queue: QueueId,
    pub cpu_model: CpuModelId,
    pub timestamp: DateTime<Utc>,
    /// HS23 score of the whole slot.
    pub score: f64,
    pub allocated_cores: u32,
    pub physical_cores: u32,
    pub online_cores: u32,
    pub smt_enabled: bool,
    pub load_avg: f64,
    pub cpu_freq_avg: Option<f64>,
    pub mem_used: Option<f64>,
}

impl BenchmarkRecord {
    /// Check the record invariants. The error text is the violated rule.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.score.is_finite() && self.score > 0.0) {
            return Err(ModelError::Invariant("score > 0"));
        }
        if self.allocated_cores < 1 {
            return Err(ModelError::Invariant("allocated_cores ≥ 1"));
        }
        if self.physical_cores < 1 {
            return Err(ModelError::Invariant("physical_cores ≥ 1"));
        }
        if self.online_cores < self.physical_cores {
            return Err(ModelError::Invariant("online_cores ≥ physical_cores"));
        }
        if self.smt_enabled && self.online_cores <= self.physical_cores {
            return Err(ModelError::Invariant(
                "smt_enabled implies online_cores > physical_cores",
            ));
        }
        if !(self.load_avg.is_finite() && self.load_avg >= 0.0) {
            return Err(ModelError::Invariant("load_avg ≥ 0"));
        }
        Ok(())
    }

    /// Per-record runtime corepower: slot score divided by slot cores.
    pub fn corepower(&self) -> f64 {
        self.score / f64::from(self.allocated_cores)
    }
}

/// One production job from the accounting stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub queue: QueueId,
    pub cpu_model: CpuModelId,
    /// Seconds.
    pub walltime: f64,
    pub cores: u32,
}

impl JobRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.walltime.is_finite() && self.walltime > 0.0) {
            return Err(ModelError::Invariant("walltime > 0"));
        }
        if self.cores < 1 {
            return Err(ModelError::Invariant("cores ≥ 1"));
        }
        Ok(())
    }

    pub fn walltime_x_core(&self) -> f64 {
        self.walltime * f64::from(self.cores)
    }
}

/// Registry row: the corepower a queue declares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredEntry {
    pub queue: QueueId,
    pub declared_corepower: f64,
    pub source: String,
}

impl DeclaredEntry {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.declared_corepower.is_finite() && self.declared_corepower > 0.0) {
            return Err(ModelError::Invariant("declared_corepower > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    /// Runtime well below declared: the queue overreports.
    CriticalNegative,
    Within,
    /// Runtime well above declared: the queue underreports.
    CriticalPositive,
}

impl Classification {
    pub fn is_critical(self) -> bool {
        self != Classification::Within
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::CriticalNegative => "CRITICAL_NEGATIVE",
            Classification::Within => "WITHIN",
            Classification::CriticalPositive => "CRITICAL_POSITIVE",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-queue result of comparing runtime against declared corepower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueAudit {
    pub queue: QueueId,
    /// Share of walltime × cores per CPU model; sums to one.
    pub weights: BTreeMap<CpuModelId, f64>,
    /// Mean per-run corepower of each benchmarked model.
    pub per_model_runtime: BTreeMap<CpuModelId, f64>,
    pub per_model_runs: BTreeMap<CpuModelId, usize>,
    pub runtime_corepower: f64,
    pub declared_corepower: f64,
    pub relative_change: f64,
    /// Present only when the weights are complete.
    pub classification: Option<Classification>,
    /// Total walltime × cores of the queue's jobs.
    pub contribution: f64,
    pub complete_weights: bool,
}

impl QueueAudit {
    /// Complete weights and a classification: counted in report statistics.
    pub fn is_auditable(&self) -> bool {
        self.complete_weights && self.classification.is_some()
    }

    pub fn benchmark_runs(&self) -> usize {
        self.per_model_runs.values().sum()
    }
}
