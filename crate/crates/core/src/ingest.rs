//! Parsing and validation of the three input streams.
//!
//! Benchmark and job streams are JSON Lines: a bad line is counted as a
//! rejection and parsing continues. The declared-corepower registry is CSV
//! and must be unambiguous, so a duplicate queue key aborts the parse.
//! Blank lines and lines starting with `#` are skipped in every format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{IngestError, ModelError};
use crate::model::{BenchmarkRecord, CpuModelId, DeclaredEntry, JobRecord, QueueId};

pub const DECLARED_HEADER: &str = "site,queue,declared_corepower,source";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Match CPU models on the trimmed raw string instead of the
    /// normalized form.
    pub strict_cpu_names: bool,
}

impl IngestOptions {
    pub fn cpu_model(&self, raw: &str) -> Result<CpuModelId, ModelError> {
        if self.strict_cpu_names {
            CpuModelId::exact(raw)
        } else {
            normalize_cpu_model(raw)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub first: DateTime<Utc>,
    pub last: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_reasons: BTreeMap<String, usize>,
    pub distinct_queues: usize,
    pub distinct_cpu_models: usize,
    pub time_span: Option<TimeSpan>,
}

impl IngestReport {
    fn reject(&mut self, reason: impl Into<String>) {
        self.rejected += 1;
        *self.rejection_reasons.entry(reason.into()).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }
}

/// Canonicalize a raw CPU model string (see [`CpuModelId::normalize`]).
pub fn normalize_cpu_model(raw: &str) -> Result<CpuModelId, ModelError> {
    CpuModelId::normalize(raw)
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkLine {
    timestamp: DateTime<Utc>,
    site: String,
    queue: String,
    cpu_model: String,
    score_hs23: f64,
    allocated_cores: u32,
    physical_cores: u32,
    online_cores: u32,
    smt_enabled: bool,
    load_avg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cpu_freq_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mem_used_gib: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JobLine {
    site: String,
    queue: String,
    cpu_model: String,
    walltime_s: f64,
    cores: u32,
}

fn is_skipped(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn json_reason(err: &serde_json::Error) -> String {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => {
            let msg = err.to_string();
            match msg.strip_prefix("missing field ") {
                Some(rest) => {
                    let field = rest.split(" at line").next().unwrap_or(rest);
                    format!("missing field {field}")
                }
                None => "invalid field value".to_string(),
            }
        }
        _ => "malformed JSON".to_string(),
    }
}

/// Drive a line-oriented parse, counting every non-skipped line once.
fn parse_lines<R, T, F>(reader: R, mut parse: F) -> Result<(Vec<T>, IngestReport), IngestError>
where
    R: BufRead,
    F: FnMut(&str) -> Result<T, String>,
{
    let mut out = Vec::new();
    let mut report = IngestReport::default();
    for line in reader.lines() {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        match parse(&line) {
            Ok(rec) => {
                report.accepted += 1;
                out.push(rec);
            }
            Err(reason) => report.reject(reason),
        }
    }
    Ok((out, report))
}

fn benchmark_from_line(line: &str, opts: &IngestOptions) -> Result<BenchmarkRecord, String> {
    let raw: BenchmarkLine = serde_json::from_str(line).map_err(|e| json_reason(&e))?;
    let queue = QueueId::new(&raw.site, &raw.queue).map_err(|e| e.to_string())?;
    let cpu_model = opts.cpu_model(&raw.cpu_model).map_err(|e| e.to_string())?;
    let timestamp = raw.timestamp.with_nanosecond(0).unwrap_or(raw.timestamp);
    let rec = BenchmarkRecord {
        queue,
        cpu_model,
        timestamp,
        score: raw.score_hs23,
        allocated_cores: raw.allocated_cores,
        physical_cores: raw.physical_cores,
        online_cores: raw.online_cores,
        smt_enabled: raw.smt_enabled,
        load_avg: raw.load_avg,
        cpu_freq_avg: raw.cpu_freq_mhz,
        mem_used: raw.mem_used_gib,
    };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Parse a benchmark-record JSONL stream.
pub fn parse_benchmark_records<R: BufRead>(
    reader: R,
    opts: &IngestOptions,
) -> Result<(Vec<BenchmarkRecord>, IngestReport), IngestError> {
    let (records, mut report) = parse_lines(reader, |line| benchmark_from_line(line, opts))?;
    report.distinct_queues = records.iter().map(|r| &r.queue).collect::<BTreeSet<_>>().len();
    report.distinct_cpu_models = records
        .iter()
        .map(|r| &r.cpu_model)
        .collect::<BTreeSet<_>>()
        .len();
    let first = records.iter().map(|r| r.timestamp).min();
    let last = records.iter().map(|r| r.timestamp).max();
    report.time_span = first.zip(last).map(|(first, last)| TimeSpan { first, last });
    Ok((records, report))
}

fn job_from_line(line: &str, opts: &IngestOptions) -> Result<JobRecord, String> {
    let raw: JobLine = serde_json::from_str(line).map_err(|e| json_reason(&e))?;
    let rec = JobRecord {
        queue: QueueId::new(&raw.site, &raw.queue).map_err(|e| e.to_string())?,
        cpu_model: opts.cpu_model(&raw.cpu_model).map_err(|e| e.to_string())?,
        walltime: raw.walltime_s,
        cores: raw.cores,
    };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Parse a job-accounting JSONL stream.
pub fn parse_job_accounting<R: BufRead>(
    reader: R,
    opts: &IngestOptions,
) -> Result<(Vec<JobRecord>, IngestReport), IngestError> {
    let (records, mut report) = parse_lines(reader, |line| job_from_line(line, opts))?;
    report.distinct_queues = records.iter().map(|r| &r.queue).collect::<BTreeSet<_>>().len();
    report.distinct_cpu_models = records
        .iter()
        .map(|r| &r.cpu_model)
        .collect::<BTreeSet<_>>()
        .len();
    Ok((records, report))
}

/// Parse the declared-corepower registry CSV.
///
/// Rows with a non-positive or unparsable corepower are rejected; a second
/// accepted row for the same queue is fatal.
pub fn parse_declared<R: BufRead>(
    reader: R,
) -> Result<(Vec<DeclaredEntry>, IngestReport), IngestError> {
    let mut lines = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !is_skipped(&line) {
            lines.push(line);
        }
    }
    let mut report = IngestReport::default();
    let Some((header, rows)) = lines.split_first() else {
        return Ok((Vec::new(), report));
    };
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    if found.join(",") != DECLARED_HEADER {
        return Err(IngestError::Header {
            expected: DECLARED_HEADER,
            found: header.clone(),
        });
    }

    let mut entries: Vec<DeclaredEntry> = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rows {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(row.as_bytes());
        let Some(fields) = rdr.records().next().transpose()? else {
            continue;
        };
        if fields.len() != 4 {
            report.reject("expected 4 fields");
            continue;
        }
        let queue = match QueueId::new(&fields[0], &fields[1]) {
            Ok(q) => q,
            Err(e) => {
                report.reject(e.to_string());
                continue;
            }
        };
        let Ok(declared_corepower) = fields[2].parse::<f64>() else {
            report.reject("declared_corepower not a number");
            continue;
        };
        let entry = DeclaredEntry {
            queue,
            declared_corepower,
            source: fields[3].to_string(),
        };
        if let Err(e) = entry.validate() {
            report.reject(e.to_string());
            continue;
        }
        if !seen.insert(entry.queue.clone()) {
            return Err(IngestError::DuplicateQueue(entry.queue));
        }
        report.accepted += 1;
        entries.push(entry);
    }
    report.distinct_queues = seen.len();
    Ok((entries, report))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Write benchmark records in the JSONL input format.
pub fn write_benchmark_records<W: Write>(
    mut w: W,
    records: &[BenchmarkRecord],
) -> std::io::Result<()> {
    for r in records {
        let line = BenchmarkLine {
            timestamp: r.timestamp,
            site: r.queue.site.clone(),
            queue: r.queue.queue.clone(),
            cpu_model: r.cpu_model.to_string(),
            score_hs23: r.score,
            allocated_cores: r.allocated_cores,
            physical_cores: r.physical_cores,
            online_cores: r.online_cores,
            smt_enabled: r.smt_enabled,
            load_avg: r.load_avg,
            cpu_freq_mhz: r.cpu_freq_avg,
            mem_used_gib: r.mem_used,
        };
        write_json_line(&mut w, &line)?;
    }
    w.flush()
}

pub fn write_job_records<W: Write>(mut w: W, records: &[JobRecord]) -> std::io::Result<()> {
    for r in records {
        let line = JobLine {
            site: r.queue.site.clone(),
            queue: r.queue.queue.clone(),
            cpu_model: r.cpu_model.to_string(),
            walltime_s: r.walltime,
            cores: r.cores,
        };
        write_json_line(&mut w, &line)?;
    }
    w.flush()
}

pub fn write_declared<W: Write>(w: W, entries: &[DeclaredEntry]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(DECLARED_HEADER.split(','))?;
    for e in entries {
        wtr.write_record([
            e.queue.site.as_str(),
            e.queue.queue.as_str(),
            &e.declared_corepower.to_string(),
            e.source.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
