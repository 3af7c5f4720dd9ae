mod common;

use std::fs;

use chrono::DateTime;
use common::{fixed_time, fleet, profile, queue_spec};
use corepower_audit::anonymize::anonymize_sites;
use corepower_audit::fleetsim::{generate_fleet, simulate, DeclaredPolicy, FleetConfig, LoadDistribution, SimParams};
use corepower_audit::ingest::normalize_cpu_model;
use corepower_audit::loadstats::CorrelationMethod;
use corepower_audit::plot::{emit_plot_data, CURVE_DIR, SCATTER_FILE};
use corepower_audit::{
    run_audit, AuditInputs, AuditMode, AuditOptions, BenchmarkRecord, Classification, DeclaredEntry,
    JobRecord, LoadBand, QueueId, ReportError, RowStatus,
};

fn q(site: &str, queue: &str) -> QueueId {
    QueueId::new(site, queue).unwrap()
}

fn job(queue: &QueueId, model: &str, walltime: f64) -> JobRecord {
    JobRecord { queue: queue.clone(), cpu_model: normalize_cpu_model(model).unwrap(), walltime, cores: 8 }
}

fn run(queue: &QueueId, model: &str, corepower: f64, load_per_core: f64, i: i64) -> BenchmarkRecord {
    BenchmarkRecord {
        queue: queue.clone(),
        cpu_model: normalize_cpu_model(model).unwrap(),
        timestamp: DateTime::from_timestamp(1_704_067_200 + 14_400 * i, 0).unwrap(),
        score: corepower * 8.0,
        allocated_cores: 8,
        physical_cores: 32,
        online_cores: 64,
        smt_enabled: true,
        load_avg: load_per_core * 32.0,
        cpu_freq_avg: None,
        mem_used: None,
    }
}

fn declared(queue: &QueueId, value: f64) -> DeclaredEntry {
    DeclaredEntry { queue: queue.clone(), declared_corepower: value, source: "CRIC".into() }
}

/// Four queues: accurate, 30% slow, 60% fast with a bigger contribution,
/// and one without a registry entry.
fn fixture() -> AuditInputs {
    let (a, b, c, d) = (q("SITE_A", "q1"), q("SITE_B", "q1"), q("SITE_B", "q2"), q("SITE_C", "q1"));
    let mut inputs = AuditInputs::default();
    for (queue, cp, walltime) in [(&a, 10.0, 1000.0), (&b, 7.0, 2000.0), (&c, 16.0, 5000.0), (&d, 12.0, 100.0)] {
        inputs.jobs.push(job(queue, "EPYC 7742", walltime));
        for i in 0..4 {
            inputs.benchmarks.push(run(queue, "EPYC 7742", cp, 2.0, i));
        }
    }
    inputs.declared = vec![declared(&a, 10.0), declared(&b, 10.0), declared(&c, 10.0)];
    inputs
}

#[test]
fn missing_declared_entry_is_not_auditable() {
    let report = run_audit(&fixture(), &AuditOptions::default(), fixed_time()).unwrap();
    report.check_consistency().unwrap();
    assert_eq!(report.rows.len(), 4);
    let row = report.row(&q("SITE_C", "q1")).unwrap();
    assert_eq!(row.status, RowStatus::NotAuditable);
    assert_eq!(row.reason.as_deref(), Some("declared corepower unavailable"));
    let s = &report.summary;
    assert_eq!((s.queues, s.auditable, s.not_auditable), (4, 3, 1));
    assert_eq!(s.counts.critical(), 2);
    assert!((s.fraction_critical - 2.0 / 3.0).abs() < 1e-12);
    // Contributions 8000, 16000, 40000 with rc 0, -0.3, +0.6.
    let expected = (0.0 * 8000.0 - 0.3 * 16000.0 + 0.6 * 40000.0) / 64000.0;
    assert!((s.overall_weighted_discrepancy - expected).abs() < 1e-12);
    assert_eq!(s.by_site.sites, 3);
    assert_eq!(s.by_site.auditable_sites, 2);
    assert_eq!(s.by_site.critical_sites, 1);
}

#[test]
fn rows_are_sorted_and_unique() {
    let mut inputs = fixture();
    inputs.jobs.reverse();
    inputs.benchmarks.reverse();
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let ids: Vec<_> = report.rows.iter().map(|r| r.queue.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(ids, sorted);
}

#[test]
fn incomplete_row_is_reported_but_not_counted() {
    let mut inputs = fixture();
    let a = q("SITE_A", "q1");
    inputs.jobs.push(job(&a, "Gold 6248", 1000.0));
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let row = report.row(&a).unwrap();
    assert_eq!(row.status, RowStatus::Incomplete);
    let audit = row.audit.as_ref().unwrap();
    assert!(!audit.complete_weights);
    assert_eq!(audit.classification, None);
    assert_eq!(audit.relative_change, 0.0);
    assert_eq!(report.summary.auditable, 2);
    assert_eq!(report.summary.incomplete, 1);

    let relaxed = AuditOptions {
        policy: corepower_audit::CompletenessPolicy::new(3, 0.5).unwrap(),
        ..AuditOptions::default()
    };
    let report = run_audit(&inputs, &relaxed, fixed_time()).unwrap();
    assert_eq!(report.row(&a).unwrap().status, RowStatus::Audited);
}

#[test]
fn accurate_only_fleet_has_no_critical_queues() {
    let cfg = FleetConfig { sites: 8, simulation: SimParams { duration_hours: 400.0, ..SimParams::default() }, ..FleetConfig::default() };
    let fleet = generate_fleet(&cfg, 4).unwrap();
    let out = simulate(&fleet, &cfg.simulation).unwrap();
    let inputs = AuditInputs {
        benchmarks: out.benchmark_records,
        jobs: out.job_records,
        declared: out.declared,
        ..AuditInputs::default()
    };
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    assert!(report.summary.auditable > 0);
    assert_eq!(report.summary.fraction_critical, 0.0);
}

#[test]
fn fully_loaded_mode_notes_reduction() {
    let mut inputs = fixture();
    let b = q("SITE_B", "q1");
    for i in 10..20 {
        inputs.benchmarks.push(run(&b, "EPYC 7742", 20.0, 0.5, i));
    }
    let opts = AuditOptions { mode: AuditMode::FullyLoaded { band: LoadBand::default() }, ..AuditOptions::default() };
    let full = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let loaded = run_audit(&inputs, &opts, fixed_time()).unwrap();
    let note = loaded.fully_loaded.unwrap();
    assert_eq!(note.full_range_auditable, 3);
    assert_eq!(note.fully_loaded_auditable, 3);
    assert_eq!(note.full_range_benchmark_runs, 22);
    assert_eq!(note.fully_loaded_benchmark_runs, 12);
    let rc_full = full.row(&b).unwrap().audit.as_ref().unwrap().relative_change;
    let rc_loaded = loaded.row(&b).unwrap().audit.as_ref().unwrap().relative_change;
    assert!((rc_loaded + 0.3).abs() < 1e-12);
    assert!(rc_loaded < rc_full);
}

#[test]
fn uniform_full_load_matches_full_range_summary() {
    let inputs = fixture();
    let opts = AuditOptions { mode: AuditMode::FullyLoaded { band: LoadBand::default() }, ..AuditOptions::default() };
    let full = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let loaded = run_audit(&inputs, &opts, fixed_time()).unwrap();
    assert_eq!(full.summary, loaded.summary);
    assert_eq!(full.rows, loaded.rows);
}

#[test]
fn band_excluding_everything_fails() {
    let band = LoadBand::new((0.01, 0.1), (0.01, 0.1)).unwrap();
    let opts = AuditOptions { mode: AuditMode::FullyLoaded { band }, ..AuditOptions::default() };
    let err = run_audit(&fixture(), &opts, fixed_time()).unwrap_err();
    assert!(matches!(err, ReportError::NoAuditableQueues));
}

#[test]
fn audit_is_pure_except_timestamp() {
    let inputs = fixture();
    let a = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let b = run_audit(&inputs, &AuditOptions::default(), DateTime::from_timestamp(1_800_000_000, 0).unwrap()).unwrap();
    assert_ne!(a.metadata.generated_at, b.metadata.generated_at);
    let mut b2 = b.clone();
    b2.metadata.generated_at = a.metadata.generated_at.clone();
    let (mut ja, mut jb) = (Vec::new(), Vec::new());
    a.write_json(&mut ja).unwrap();
    b2.write_json(&mut jb).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn json_report_roundtrips() {
    let report = run_audit(&fixture(), &AuditOptions::default(), fixed_time()).unwrap();
    let mut buf = Vec::new();
    report.write_json(&mut buf).unwrap();
    let back: corepower_audit::AuditReport = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back, report);
}

#[test]
fn csv_report_has_one_row_per_queue() {
    let report = run_audit(&fixture(), &AuditOptions::default(), fixed_time()).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(body[0].starts_with("site,queue,status"));
    assert_eq!(body.len(), 5);
    assert!(text.contains("SITE_B,q1,AUDITED,"));
    assert!(text.contains("CRITICAL_NEGATIVE"));
    assert!(text.contains("SITE_C,q1,NOT_AUDITABLE,declared corepower unavailable"));
}

#[test]
fn anonymized_report_hides_site_names() {
    let report = run_audit(&fixture(), &AuditOptions::default(), fixed_time()).unwrap();
    let (anon, labels) = anonymize_sites(&report, "pepper").unwrap();
    let (again, _) = anonymize_sites(&report, "pepper").unwrap();
    assert_eq!(anon, again);
    assert!(anon.metadata.anonymized);
    assert_eq!(labels.len(), 3);
    let mut buf = Vec::new();
    anon.write_json(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for site in ["SITE_A", "SITE_B", "SITE_C"] {
        assert!(!text.contains(&format!("\"{site}\"")), "{site} leaked");
    }
    assert!(anon.rows.iter().all(|r| r.queue.site.starts_with("SITE-")));
    anon.check_consistency().unwrap();
    assert_eq!(anon.summary, report.summary);
    assert!(anonymize_sites(&report, "").is_err());
}

#[test]
fn scatter_file_weights_and_classes() {
    let inputs = fixture();
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plot_data(&report, &inputs.benchmarks, dir.path(), CorrelationMethod::Pearson).unwrap();
    assert_eq!(written.len(), 4);
    let text = fs::read_to_string(dir.path().join(SCATTER_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# threshold=0.25"));
    assert_eq!(lines.next(), Some("label,relative_change,marker_weight,classification"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let find = |label: &str| rows.iter().find(|r| r[0] == label).unwrap().clone();
    assert_eq!(find("SITE_B/q2")[2].parse::<f64>().unwrap(), 1.0);
    assert_eq!(find("SITE_B/q1")[3], Classification::CriticalNegative.as_str());
    assert!((find("SITE_B/q1")[1].parse::<f64>().unwrap() + 0.3).abs() < 1e-12);
    assert!(rows.iter().all(|r| {
        let w: f64 = r[2].parse().unwrap();
        (0.0..=1.0).contains(&w)
    }));
}

#[test]
fn load_curve_header_carries_reference_lines() {
    // Two slow servers match the registry; the rest of the fleet is faster.
    let queue = q("SITE_C", "queue1");
    let mut inputs = AuditInputs {
        declared: vec![declared(&queue, 8.74)],
        jobs: vec![job(&queue, "E5-2650", 1000.0), job(&queue, "Gold 6248", 3000.0)],
        ..AuditInputs::default()
    };
    for i in 0..6 {
        inputs.benchmarks.push(run(&queue, "E5-2650", 8.74, 1.0 + 0.1 * i as f64, i));
        inputs.benchmarks.push(run(&queue, "Gold 6248", 13.0 - 0.5 * i as f64, 1.0 + 0.2 * i as f64, i));
    }
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&report, &inputs.benchmarks, dir.path(), CorrelationMethod::Pearson).unwrap();
    let text = fs::read_to_string(dir.path().join(CURVE_DIR).join("SITE_C__queue1.csv")).unwrap();
    let header = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("# {key}="))).unwrap();
        line.split('=').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(header("declared_corepower"), 8.74);
    assert!(header("runtime_corepower") > 8.74);
    assert!(text.contains("# correlation[gold 6248]=-"));
    assert!(text.lines().any(|l| l == "cpu_model,load_per_core,corepower"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 13);
}

#[test]
fn plot_data_rejects_empty_report() {
    let mut report = run_audit(&fixture(), &AuditOptions::default(), fixed_time()).unwrap();
    report.rows.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        emit_plot_data(&report, &[], dir.path(), CorrelationMethod::Spearman),
        Err(ReportError::EmptyReport)
    ));
}

#[test]
fn stale_clone_reported_against_source_value() {
    let src = q("SITE_A", "old");
    let f = fleet(
        8,
        vec![
            queue_spec("SITE_A", "old", vec![(profile(0), 1.0)], LoadDistribution::FULL, DeclaredPolicy::Accurate),
            queue_spec("SITE_B", "new", vec![(profile(5), 1.0)], LoadDistribution::FULL, DeclaredPolicy::StaleCloned { source: src }),
        ],
    );
    let out = simulate(&f, &SimParams { duration_hours: 400.0, noise: 0.0, ..SimParams::default() }).unwrap();
    let inputs = AuditInputs { benchmarks: out.benchmark_records, jobs: out.job_records, declared: out.declared, ..AuditInputs::default() };
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    let row = report.row(&q("SITE_B", "new")).unwrap();
    let audit = row.audit.as_ref().unwrap();
    assert!((audit.relative_change - (17.0 / 7.0 - 1.0)).abs() < 1e-9);
    assert_eq!(audit.classification, Some(Classification::CriticalPositive));
}
