//! Plot-ready CSV files: the relative-change scatter and per-queue load curves.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::audit::{AuditReport, RowStatus};
use crate::error::ReportError;
use crate::loadstats::{load_correlation, load_performance_curve, CorrelationMethod};
use crate::model::{BenchmarkRecord, QueueId};

pub const SCATTER_FILE: &str = "relative_change.csv";
pub const CURVE_DIR: &str = "load_curves";

fn file_stem(q: &QueueId) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    };
    format!("{}__{}", clean(&q.site), clean(&q.queue))
}

/// Write the scatter file and one load-curve file per queue with an audit.
///
/// `records` must use the same queue ids as the report (anonymize both or
/// neither). Returns the written paths.
pub fn emit_plot_data(
    report: &AuditReport,
    records: &[BenchmarkRecord],
    out_dir: &Path,
    correlation: CorrelationMethod,
) -> Result<Vec<PathBuf>, ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    fs::create_dir_all(out_dir.join(CURVE_DIR))?;
    let mut written = Vec::new();

    let audited: Vec<_> = report
        .rows
        .iter()
        .filter(|r| r.status == RowStatus::Audited)
        .filter_map(|r| r.audit.as_ref())
        .collect();
    let max_contribution = audited.iter().map(|a| a.contribution).fold(0.0, f64::max);

    let path = out_dir.join(SCATTER_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "# threshold={}", report.metadata.options.threshold.value())?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["label", "relative_change", "marker_weight", "classification"])?;
    for a in &audited {
        let weight = if max_contribution > 0.0 { a.contribution / max_contribution } else { 0.0 };
        wtr.write_record([
            a.queue.label(),
            a.relative_change.to_string(),
            weight.to_string(),
            a.classification.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    written.push(path);

    for row in &report.rows {
        let Some(a) = &row.audit else { continue };
        let path = out_dir.join(CURVE_DIR).join(format!("{}.csv", file_stem(&row.queue)));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# queue={}", row.queue.label())?;
        writeln!(w, "# declared_corepower={}", a.declared_corepower)?;
        writeln!(w, "# runtime_corepower={}", a.runtime_corepower)?;
        let curve = load_performance_curve(records, &row.queue);
        for (model, points) in &curve {
            match load_correlation(points, correlation) {
                Ok(r) => writeln!(w, "# correlation[{model}]={r}")?,
                Err(e) => writeln!(w, "# correlation[{model}]=n/a ({e})")?,
            }
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cpu_model", "load_per_core", "corepower"])?;
        for points in curve.values() {
            for p in points {
                wtr.write_record([
                    p.cpu_model.to_string(),
                    p.load_per_core.to_string(),
                    p.corepower.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        written.push(path);
    }
    Ok(written)
}
