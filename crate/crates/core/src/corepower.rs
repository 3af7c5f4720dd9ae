//! Weighted runtime corepower and its comparison with the declared value.
//!
//! A queue's CPU models are weighted by their share of the queue's
//! walltime × cores. The runtime corepower is the weighted mean of the
//! per-model benchmark means, renormalized over the models that actually
//! have benchmark data. The relative change `runtime / declared - 1` is then
//! classified against a symmetric threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::model::{BenchmarkRecord, Classification, CpuModelId, JobRecord, QueueAudit, QueueId};

/// Absolute slack when comparing covered weight against the policy; weight
/// sums carry rounding error of a few ulps.
const WEIGHT_SUM_SLACK: f64 = 1e-9;

/// Relative-change threshold beyond which a discrepancy is critical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, AnalysisError> {
        if value.is_finite() && value > 0.0 {
            Ok(Threshold(value))
        } else {
            Err(AnalysisError::InvalidParameter("threshold > 0"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold(0.25)
    }
}

/// When a queue's weights count as complete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletenessPolicy {
    pub min_runs_per_model: usize,
    pub min_weight_covered: f64,
}

impl CompletenessPolicy {
    pub fn new(min_runs_per_model: usize, min_weight_covered: f64) -> Result<Self, AnalysisError> {
        if min_runs_per_model < 1 {
            return Err(AnalysisError::InvalidParameter("min_runs_per_model ≥ 1"));
        }
        if !(min_weight_covered > 0.0 && min_weight_covered <= 1.0) {
            return Err(AnalysisError::InvalidParameter("min_weight_covered in (0, 1]"));
        }
        Ok(CompletenessPolicy {
            min_runs_per_model,
            min_weight_covered,
        })
    }
}

impl Default for CompletenessPolicy {
    fn default() -> Self {
        CompletenessPolicy {
            min_runs_per_model: 3,
            min_weight_covered: 1.0,
        }
    }
}

/// Benchmark statistics of one CPU model on one queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub mean: f64,
    pub count: usize,
    /// Sample standard deviation; zero for a single run.
    pub std_dev: f64,
}

/// Share of the queue's walltime × cores spent on each CPU model.
pub fn compute_weights(
    jobs: &[JobRecord],
    queue: &QueueId,
) -> Result<BTreeMap<CpuModelId, f64>, AnalysisError> {
    let mut per_model: BTreeMap<CpuModelId, f64> = BTreeMap::new();
    for job in jobs.iter().filter(|j| &j.queue == queue) {
        *per_model.entry(job.cpu_model.clone()).or_default() += job.walltime_x_core();
    }
    let total: f64 = per_model.values().sum();
    if per_model.is_empty() || total <= 0.0 {
        return Err(AnalysisError::NoAccountingData);
    }
    for w in per_model.values_mut() {
        *w /= total;
    }
    Ok(per_model)
}

/// Mean, count and spread of per-run corepower for each model on `queue`.
pub fn per_model_runtime(
    records: &[BenchmarkRecord],
    queue: &QueueId,
) -> BTreeMap<CpuModelId, ModelStats> {
    let mut grouped: BTreeMap<CpuModelId, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| &r.queue == queue) {
        grouped.entry(r.cpu_model.clone()).or_default().push(r.corepower());
    }
    grouped
        .into_iter()
        .map(|(model, values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std_dev = if n > 1 {
                let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (model, ModelStats { mean, count: n, std_dev })
        })
        .collect()
}

/// Weighted mean corepower over the models present in both maps, divided by
/// the covered weight.
pub fn queue_runtime_corepower(
    weights: &BTreeMap<CpuModelId, f64>,
    per_model: &BTreeMap<CpuModelId, f64>,
) -> Result<f64, AnalysisError> {
    let mut weighted = 0.0;
    let mut covered = 0.0;
    for (model, w) in weights {
        if let Some(cp) = per_model.get(model) {
            weighted += w * cp;
            covered += w;
        }
    }
    if covered <= 0.0 {
        return Err(AnalysisError::NoBenchmarkCoverage);
    }
    Ok(weighted / covered)
}

pub fn relative_change(runtime: f64, declared: Option<f64>) -> Result<f64, AnalysisError> {
    match declared {
        Some(d) if d.is_finite() && d > 0.0 => Ok(runtime / d - 1.0),
        _ => Err(AnalysisError::DeclaredUnavailable),
    }
}

/// Strictly beyond the threshold is critical; the boundary itself is within.
pub fn classify(rc: f64, threshold: Threshold) -> Classification {
    if rc > threshold.value() {
        Classification::CriticalPositive
    } else if rc < -threshold.value() {
        Classification::CriticalNegative
    } else {
        Classification::Within
    }
}

pub fn completeness_check(
    weights: &BTreeMap<CpuModelId, f64>,
    per_model: &BTreeMap<CpuModelId, ModelStats>,
    policy: &CompletenessPolicy,
) -> bool {
    let covered: f64 = weights
        .iter()
        .filter(|(m, _)| {
            per_model
                .get(*m)
                .is_some_and(|s| s.count >= policy.min_runs_per_model)
        })
        .map(|(_, w)| w)
        .sum();
    covered + WEIGHT_SUM_SLACK >= policy.min_weight_covered
}

/// Full comparison for a single queue.
///
/// `jobs` and `records` may contain other queues; only rows for `queue` are
/// used. A queue without accounting data, benchmark coverage or a declared
/// value is an error. A queue with incomplete weights is returned with
/// `classification = None`.
pub fn audit_queue(
    queue: &QueueId,
    jobs: &[JobRecord],
    records: &[BenchmarkRecord],
    declared: Option<f64>,
    threshold: Threshold,
    policy: &CompletenessPolicy,
) -> Result<QueueAudit, AnalysisError> {
    let weights = compute_weights(jobs, queue)?;
    let stats = per_model_runtime(records, queue);
    let means: BTreeMap<CpuModelId, f64> = stats.iter().map(|(m, s)| (m.clone(), s.mean)).collect();
    let runtime = queue_runtime_corepower(&weights, &means)?;
    let rc = relative_change(runtime, declared)?;
    let complete = completeness_check(&weights, &stats, policy);
    let contribution = jobs
        .iter()
        .filter(|j| &j.queue == queue)
        .map(JobRecord::walltime_x_core)
        .sum();
    Ok(QueueAudit {
        queue: queue.clone(),
        per_model_runs: stats.iter().map(|(m, s)| (m.clone(), s.count)).collect(),
        weights,
        per_model_runtime: means,
        runtime_corepower: runtime,
        declared_corepower: declared.unwrap_or_default(),
        relative_change: rc,
        classification: complete.then(|| classify(rc, threshold)),
        contribution,
        complete_weights: complete,
    })
}

/// Contribution-weighted mean relative change over auditable queues.
pub fn overall_weighted_discrepancy(audits: &[QueueAudit]) -> Result<f64, AnalysisError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in audits.iter().filter(|a| a.is_auditable()) {
        num += a.contribution * a.relative_change;
        den += a.contribution;
    }
    if den <= 0.0 {
        return Err(AnalysisError::NoAuditableQueues);
    }
    Ok(num / den)
}
