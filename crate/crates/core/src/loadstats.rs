//! Load per physical core, full-load filtering and load/performance correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corepower::{audit_queue, CompletenessPolicy, Threshold};
use crate::error::AnalysisError;
use crate::model::{BenchmarkRecord, CpuModelId, JobRecord, QueueAudit, QueueId};

/// Load per physical core above which a host without SMT looks oversubscribed
/// enough that its SMT flag is suspect.
pub const SMT_SUSPECT_LOAD: f64 = 1.2;

/// Inclusive load/physical-core windows that count as fully loaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadBand {
    pub ht_off_full: (f64, f64),
    pub ht_on_full: (f64, f64),
}

impl LoadBand {
    pub fn new(ht_off_full: (f64, f64), ht_on_full: (f64, f64)) -> Result<Self, AnalysisError> {
        for (lo, hi) in [ht_off_full, ht_on_full] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(AnalysisError::InvalidParameter("load band requires 0 < low < high"));
            }
        }
        Ok(LoadBand { ht_off_full, ht_on_full })
    }

    pub fn contains(&self, record: &BenchmarkRecord) -> bool {
        let (lo, hi) = if record.smt_enabled { self.ht_on_full } else { self.ht_off_full };
        let load = load_per_physical_core(record);
        load >= lo && load <= hi
    }
}

impl Default for LoadBand {
    fn default() -> Self {
        LoadBand {
            ht_off_full: (0.9, 1.1),
            ht_on_full: (1.8, 2.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCurvePoint {
    pub cpu_model: CpuModelId,
    pub load_per_core: f64,
    pub corepower: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

/// Hosts reporting SMT off while running well above one load per core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmtWarning {
    pub queue: QueueId,
    pub cpu_model: CpuModelId,
    pub records: usize,
}

pub fn load_per_physical_core(r: &BenchmarkRecord) -> f64 {
    r.load_avg / f64::from(r.physical_cores)
}

/// Keep fully loaded records, preserving order.
pub fn fully_loaded_filter(records: &[BenchmarkRecord], band: &LoadBand) -> Vec<BenchmarkRecord> {
    records.iter().filter(|r| band.contains(r)).cloned().collect()
}

/// Raw scatter of (load/core, corepower) for `queue`, grouped by CPU model.
pub fn load_performance_curve(
    records: &[BenchmarkRecord],
    queue: &QueueId,
) -> BTreeMap<CpuModelId, Vec<LoadCurvePoint>> {
    let mut out: BTreeMap<CpuModelId, Vec<LoadCurvePoint>> = BTreeMap::new();
    for r in records.iter().filter(|r| &r.queue == queue) {
        out.entry(r.cpu_model.clone()).or_default().push(LoadCurvePoint {
            cpu_model: r.cpu_model.clone(),
            load_per_core: load_per_physical_core(r),
            corepower: r.corepower(),
        });
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative cutoff: spread indistinguishable from rounding counts as none.
    let tiny = |ss: f64, m: f64| ss <= (f64::EPSILON * m.abs()).powi(2) * n * 16.0;
    if sxx == 0.0 || syy == 0.0 || tiny(sxx, mx) || tiny(syy, my) {
        return Err(AnalysisError::InsufficientVariation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties share their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Correlation between load/core and corepower for one model's points.
pub fn load_correlation(
    points: &[LoadCurvePoint],
    method: CorrelationMethod,
) -> Result<f64, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::InsufficientVariation);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.load_per_core).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.corepower).collect();
    match method {
        CorrelationMethod::Pearson => pearson(&xs, &ys),
        CorrelationMethod::Spearman => pearson(&ranks(&xs), &ranks(&ys)),
    }
}

/// Group hosts whose SMT flag disagrees with their load.
pub fn smt_consistency_warnings(records: &[BenchmarkRecord]) -> Vec<SmtWarning> {
    let mut counts: BTreeMap<(QueueId, CpuModelId), usize> = BTreeMap::new();
    for r in records {
        if !r.smt_enabled && load_per_physical_core(r) > SMT_SUSPECT_LOAD {
            *counts.entry((r.queue.clone(), r.cpu_model.clone())).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|((queue, cpu_model), records)| SmtWarning { queue, cpu_model, records })
        .collect()
}

/// [`audit_queue`] restricted to fully loaded measurements.
pub fn audit_fully_loaded(
    queue: &QueueId,
    jobs: &[JobRecord],
    records: &[BenchmarkRecord],
    declared: Option<f64>,
    threshold: Threshold,
    policy: &CompletenessPolicy,
    band: &LoadBand,
) -> Result<QueueAudit, AnalysisError> {
    let loaded = fully_loaded_filter(records, band);
    match audit_queue(queue, jobs, &loaded, declared, threshold, policy) {
        Err(AnalysisError::NoBenchmarkCoverage) => Err(AnalysisError::NoFullyLoadedMeasurements),
        other => other,
    }
}
