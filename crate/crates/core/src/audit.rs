//! End-to-end audit: group inputs by queue, audit each queue, summarize.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corepower::{audit_queue, overall_weighted_discrepancy, CompletenessPolicy, Threshold};
use crate::error::{AnalysisError, IngestError, ReportError};
use crate::ingest::{
    format_timestamp, parse_benchmark_records, parse_declared, parse_job_accounting, IngestOptions,
    IngestReport,
};
use crate::loadstats::{audit_fully_loaded, smt_consistency_warnings, LoadBand, SmtWarning};
use crate::model::{BenchmarkRecord, Classification, DeclaredEntry, JobRecord, QueueAudit, QueueId};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub benchmarks: Option<PathBuf>,
    pub jobs: Option<PathBuf>,
    pub declared: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub benchmarks: IngestReport,
    pub jobs: IngestReport,
    pub declared: IngestReport,
}

/// Parsed and validated inputs of one audit run.
#[derive(Debug, Clone, Default)]
pub struct AuditInputs {
    pub benchmarks: Vec<BenchmarkRecord>,
    pub jobs: Vec<JobRecord>,
    pub declared: Vec<DeclaredEntry>,
    pub paths: InputPaths,
    pub ingest: IngestSummary,
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IngestError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

impl AuditInputs {
    pub fn load(
        benchmarks: &Path,
        jobs: &Path,
        declared: &Path,
        opts: &IngestOptions,
    ) -> Result<Self, IngestError> {
        let (bench_records, bench_report) = parse_benchmark_records(open(benchmarks)?, opts)?;
        let (job_records, job_report) = parse_job_accounting(open(jobs)?, opts)?;
        let (declared_entries, declared_report) = parse_declared(open(declared)?)?;
        Ok(AuditInputs {
            benchmarks: bench_records,
            jobs: job_records,
            declared: declared_entries,
            paths: InputPaths {
                benchmarks: Some(benchmarks.to_path_buf()),
                jobs: Some(jobs.to_path_buf()),
                declared: Some(declared.to_path_buf()),
            },
            ingest: IngestSummary {
                benchmarks: bench_report,
                jobs: job_report,
                declared: declared_report,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AuditMode {
    FullRange,
    FullyLoaded { band: LoadBand },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub threshold: Threshold,
    pub policy: CompletenessPolicy,
    pub mode: AuditMode,
    pub strict_cpu_names: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            threshold: Threshold::default(),
            policy: CompletenessPolicy::default(),
            mode: AuditMode::FullRange,
            strict_cpu_names: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowStatus {
    Audited,
    /// Declared value and coverage exist but weights are incomplete.
    Incomplete,
    NotAuditable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub queue: QueueId,
    pub status: RowStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<QueueAudit>,
}

impl AuditRow {
    pub fn classification(&self) -> Option<Classification> {
        self.audit.as_ref().and_then(|a| a.classification)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub critical_negative: usize,
    pub within: usize,
    pub critical_positive: usize,
}

impl ClassCounts {
    fn add(&mut self, c: Classification) {
        match c {
            Classification::CriticalNegative => self.critical_negative += 1,
            Classification::Within => self.within += 1,
            Classification::CriticalPositive => self.critical_positive += 1,
        }
    }

    pub fn critical(&self) -> usize {
        self.critical_negative + self.critical_positive
    }

    pub fn total(&self) -> usize {
        self.critical() + self.within
    }
}

/// Same statistic grouped by site: a site is critical when any of its
/// audited queues is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub sites: usize,
    pub auditable_sites: usize,
    pub critical_sites: usize,
    pub fraction_critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queues: usize,
    pub auditable: usize,
    pub incomplete: usize,
    pub not_auditable: usize,
    pub counts: ClassCounts,
    /// Critical queues over auditable queues.
    pub fraction_critical: f64,
    pub overall_weighted_discrepancy: f64,
    pub by_site: SiteSummary,
}

/// How much the fully-loaded restriction shrank the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullyLoadedNote {
    pub full_range_auditable: usize,
    pub fully_loaded_auditable: usize,
    pub full_range_benchmark_runs: usize,
    pub fully_loaded_benchmark_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub generated_at: String,
    pub inputs: InputPaths,
    pub options: AuditOptions,
    pub ingest: IngestSummary,
    pub anonymized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: RunMetadata,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fully_loaded: Option<FullyLoadedNote>,
    pub smt_warnings: Vec<SmtWarning>,
    pub rows: Vec<AuditRow>,
}

struct QueueInputs {
    jobs: Vec<JobRecord>,
    records: Vec<BenchmarkRecord>,
    declared: Option<f64>,
}

fn group_by_queue(inputs: &AuditInputs) -> BTreeMap<QueueId, QueueInputs> {
    let mut groups: BTreeMap<QueueId, QueueInputs> = BTreeMap::new();
    for j in &inputs.jobs {
        groups
            .entry(j.queue.clone())
            .or_insert_with(QueueInputs::empty)
            .jobs
            .push(j.clone());
    }
    for r in &inputs.benchmarks {
        groups
            .entry(r.queue.clone())
            .or_insert_with(QueueInputs::empty)
            .records
            .push(r.clone());
    }
    for d in &inputs.declared {
        groups
            .entry(d.queue.clone())
            .or_insert_with(QueueInputs::empty)
            .declared = Some(d.declared_corepower);
    }
    groups
}

impl QueueInputs {
    fn empty() -> Self {
        QueueInputs { jobs: Vec::new(), records: Vec::new(), declared: None }
    }
}

fn row_from(queue: &QueueId, result: Result<QueueAudit, AnalysisError>) -> AuditRow {
    match result {
        Ok(audit) if audit.is_auditable() => AuditRow {
            queue: queue.clone(),
            status: RowStatus::Audited,
            reason: None,
            audit: Some(audit),
        },
        Ok(audit) => AuditRow {
            queue: queue.clone(),
            status: RowStatus::Incomplete,
            reason: Some("incomplete weights".into()),
            audit: Some(audit),
        },
        Err(e) => AuditRow {
            queue: queue.clone(),
            status: RowStatus::NotAuditable,
            reason: Some(e.to_string()),
            audit: None,
        },
    }
}

fn audit_rows(groups: &BTreeMap<QueueId, QueueInputs>, opts: &AuditOptions, mode: AuditMode) -> Vec<AuditRow> {
    let work: Vec<(&QueueId, &QueueInputs)> = groups.iter().collect();
    // Ordered collect keeps the sorted QueueId order of the map.
    work.par_iter()
        .map(|(queue, g)| {
            let result = match mode {
                AuditMode::FullRange => {
                    audit_queue(queue, &g.jobs, &g.records, g.declared, opts.threshold, &opts.policy)
                }
                AuditMode::FullyLoaded { band } => audit_fully_loaded(
                    queue,
                    &g.jobs,
                    &g.records,
                    g.declared,
                    opts.threshold,
                    &opts.policy,
                    &band,
                ),
            };
            row_from(queue, result)
        })
        .collect()
}

fn audited(rows: &[AuditRow]) -> impl Iterator<Item = &QueueAudit> {
    rows.iter()
        .filter(|r| r.status == RowStatus::Audited)
        .filter_map(|r| r.audit.as_ref())
}

/// Summary statistics recomputed from rows.
pub fn summarize(rows: &[AuditRow]) -> Result<Summary, ReportError> {
    let mut counts = ClassCounts::default();
    let mut incomplete = 0;
    let mut not_auditable = 0;
    let mut site_state: BTreeMap<&str, Option<bool>> = BTreeMap::new();
    for row in rows {
        let site = site_state.entry(row.queue.site.as_str()).or_insert(None);
        match row.status {
            RowStatus::Audited => {
                let c = row.classification().expect("audited rows are classified");
                counts.add(c);
                *site = Some(site.unwrap_or(false) || c.is_critical());
            }
            RowStatus::Incomplete => incomplete += 1,
            RowStatus::NotAuditable => not_auditable += 1,
        }
    }
    let auditable = counts.total();
    if auditable == 0 {
        return Err(ReportError::NoAuditableQueues);
    }
    let audits: Vec<QueueAudit> = audited(rows).cloned().collect();
    let overall = overall_weighted_discrepancy(&audits).map_err(|_| ReportError::NoAuditableQueues)?;
    let auditable_sites = site_state.values().filter(|s| s.is_some()).count();
    let critical_sites = site_state.values().filter(|s| **s == Some(true)).count();
    Ok(Summary {
        queues: rows.len(),
        auditable,
        incomplete,
        not_auditable,
        counts,
        fraction_critical: counts.critical() as f64 / auditable as f64,
        overall_weighted_discrepancy: overall,
        by_site: SiteSummary {
            sites: site_state.len(),
            auditable_sites,
            critical_sites,
            fraction_critical: critical_sites as f64 / auditable_sites as f64,
        },
    })
}

/// Audit every queue seen in any input.
///
/// The result depends only on `inputs`, `opts` and `generated_at`.
pub fn run_audit(
    inputs: &AuditInputs,
    opts: &AuditOptions,
    generated_at: DateTime<Utc>,
) -> Result<AuditReport, ReportError> {
    let groups = group_by_queue(inputs);
    let rows = audit_rows(&groups, opts, opts.mode);
    let summary = summarize(&rows)?;

    let fully_loaded = match opts.mode {
        AuditMode::FullRange => None,
        AuditMode::FullyLoaded { .. } => {
            let full_rows = audit_rows(&groups, opts, AuditMode::FullRange);
            let runs = |rows: &[AuditRow]| audited(rows).map(QueueAudit::benchmark_runs).sum();
            Some(FullyLoadedNote {
                full_range_auditable: audited(&full_rows).count(),
                fully_loaded_auditable: summary.auditable,
                full_range_benchmark_runs: runs(&full_rows),
                fully_loaded_benchmark_runs: runs(&rows),
            })
        }
    };

    Ok(AuditReport {
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at: format_timestamp(&generated_at),
            inputs: inputs.paths.clone(),
            options: *opts,
            ingest: inputs.ingest.clone(),
            anonymized: false,
        },
        summary,
        fully_loaded,
        smt_warnings: smt_consistency_warnings(&inputs.benchmarks),
        rows,
    })
}

impl AuditReport {
    /// Every queue once, sorted, and summary counts matching the rows.
    pub fn check_consistency(&self) -> Result<(), String> {
        let ids: Vec<&QueueId> = self.rows.iter().map(|r| &r.queue).collect();
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err("rows are not strictly sorted by queue".into());
        }
        let recomputed = summarize(&self.rows).map_err(|e| e.to_string())?;
        if recomputed.counts != self.summary.counts
            || recomputed.auditable != self.summary.auditable
            || recomputed.queues != self.summary.queues
        {
            return Err("summary counts disagree with rows".into());
        }
        Ok(())
    }

    pub fn queue_ids(&self) -> BTreeSet<QueueId> {
        self.rows.iter().map(|r| r.queue.clone()).collect()
    }

    pub fn row(&self, queue: &QueueId) -> Option<&AuditRow> {
        self.rows.iter().find(|r| &r.queue == queue)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), ReportError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// One row per queue, summary as leading `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ReportError> {
        let s = &self.summary;
        writeln!(w, "# tool_version={}", self.metadata.tool_version)?;
        writeln!(w, "# generated_at={}", self.metadata.generated_at)?;
        writeln!(w, "# threshold={}", self.metadata.options.threshold.value())?;
        writeln!(
            w,
            "# queues={} auditable={} incomplete={} not_auditable={}",
            s.queues, s.auditable, s.incomplete, s.not_auditable
        )?;
        writeln!(
            w,
            "# critical_negative={} within={} critical_positive={}",
            s.counts.critical_negative, s.counts.within, s.counts.critical_positive
        )?;
        writeln!(w, "# fraction_critical_queues={}", s.fraction_critical)?;
        writeln!(w, "# fraction_critical_sites={}", s.by_site.fraction_critical)?;
        writeln!(w, "# overall_weighted_discrepancy={}", s.overall_weighted_discrepancy)?;

        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "site",
            "queue",
            "status",
            "reason",
            "runtime_corepower",
            "declared_corepower",
            "relative_change",
            "classification",
            "contribution",
            "complete_weights",
            "benchmark_runs",
        ])?;
        for row in &self.rows {
            let status = serde_json::to_value(row.status)?;
            let mut fields = vec![
                row.queue.site.clone(),
                row.queue.queue.clone(),
                status.as_str().unwrap_or_default().to_string(),
                row.reason.clone().unwrap_or_default(),
            ];
            match &row.audit {
                Some(a) => fields.extend([
                    a.runtime_corepower.to_string(),
                    a.declared_corepower.to_string(),
                    a.relative_change.to_string(),
                    a.classification.map(|c| c.to_string()).unwrap_or_default(),
                    a.contribution.to_string(),
                    a.complete_weights.to_string(),
                    a.benchmark_runs().to_string(),
                ]),
                None => fields.extend(std::iter::repeat_n(String::new(), 7)),
            }
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
