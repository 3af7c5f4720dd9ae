mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{fixed_time, fleet, ingest_output, profile, queue_spec};
use corepower_audit::corepower::compute_weights;
use corepower_audit::fleetsim::{
    generate_fleet, simulate, simulate_benchmarks, simulate_job_accounting, DeclaredPolicy,
    FleetConfig, LoadDistribution, SimParams, WeightedLoad, BENCHMARKS_FILE, DECLARED_FILE,
    JOBS_FILE, ORACLE_FILE,
};
use corepower_audit::{run_audit, AuditOptions, CpuModelId, QueueId, RowStatus};

fn params(duration_hours: f64, noise: f64) -> SimParams {
    SimParams { duration_hours, noise, ..SimParams::default() }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = FleetConfig { clone_fraction: 0.5, inherit_fraction: 0.5, discrepant_fraction: 0.2, ..FleetConfig::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let fleet = generate_fleet(&cfg, 42).unwrap();
        simulate(&fleet, &cfg.simulation).unwrap().write_dir(d.path()).unwrap();
    }
    for name in [BENCHMARKS_FILE, JOBS_FILE, DECLARED_FILE, ORACLE_FILE] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let f1 = serde_json::to_vec(&generate_fleet(&cfg, 42).unwrap()).unwrap();
    let f2 = serde_json::to_vec(&generate_fleet(&cfg, 42).unwrap()).unwrap();
    assert_eq!(f1, f2);
    let f3 = serde_json::to_vec(&generate_fleet(&cfg, 43).unwrap()).unwrap();
    assert_ne!(f1, f3);
}

#[test]
fn clone_and_inherit_proportions() {
    let cfg = FleetConfig {
        sites: 500,
        queues_per_site: corepower_audit::fleetsim::CountRange { min: 2, max: 2 },
        clone_fraction: 0.8,
        inherit_fraction: 0.5,
        ..FleetConfig::default()
    };
    let fleet = generate_fleet(&cfg, 9).unwrap();
    let queues: Vec<_> = fleet.queues().collect();
    assert_eq!(queues.len(), 1000);
    let cloned = queues.iter().filter(|q| q.cloned).count() as f64;
    let stale = queues
        .iter()
        .filter(|q| matches!(q.declared, DeclaredPolicy::StaleCloned { .. }))
        .count() as f64;
    assert!((cloned / 1000.0 - 0.8).abs() <= 0.03, "cloned {cloned}");
    assert!((stale / cloned - 0.5).abs() <= 0.03, "stale {stale}");
    for q in &queues {
        if let DeclaredPolicy::StaleCloned { source } = &q.declared {
            assert!(q.cloned);
            assert_ne!(source, &q.id);
            assert!(!fleet.queue(source).unwrap().cloned, "sources are original queues");
        }
    }
}

#[test]
fn job_weights_follow_shares() {
    let a = profile(3);
    let b = profile(4);
    let mut q = queue_spec("S", "q", vec![(a.clone(), 0.5), (b.clone(), 0.5)], LoadDistribution::FULL, DeclaredPolicy::Accurate);
    q.jobs_per_hour = 10.0;
    let f = fleet(3, vec![q]);
    let jobs = simulate_job_accounting(&f, 1000.0).unwrap();
    assert_eq!(jobs.len(), 10_000);
    let w = compute_weights(&jobs, &QueueId::new("S", "q").unwrap()).unwrap();
    assert!((w[&a.model] - 0.5).abs() <= 0.02);
    assert!((w[&b.model] - 0.5).abs() <= 0.02);
    assert!(jobs.iter().all(|j| j.walltime > 0.0 && (j.cores == 1 || j.cores == 8)));
}

#[test]
fn cadence_and_record_shape() {
    let p = profile(3);
    let f = fleet(1, vec![queue_spec("S", "q", vec![(p.clone(), 1.0)], LoadDistribution { low: 0.2, high: 1.0 }, DeclaredPolicy::Accurate)]);
    let recs = simulate_benchmarks(&f, &params(24.0, 0.02)).unwrap();
    assert_eq!(recs.len(), 6);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.allocated_cores, 8);
        assert_eq!(r.physical_cores, p.physical_cores);
        assert_eq!(r.online_cores, 2 * p.physical_cores);
        assert!(r.validate().is_ok());
        if i > 0 {
            assert_eq!((r.timestamp - recs[i - 1].timestamp).num_hours(), 4);
        }
    }
}

#[test]
fn noisy_mean_within_three_standard_errors() {
    let p = profile(4);
    let truth = p.true_corepower_at_full_load;
    let f = fleet(11, vec![queue_spec("S", "q", vec![(p, 1.0)], LoadDistribution::FULL, DeclaredPolicy::Accurate)]);
    let recs = simulate_benchmarks(&f, &params(2000.0, 0.02)).unwrap();
    assert_eq!(recs.len(), 500);
    let cps: Vec<f64> = recs.iter().map(|r| r.corepower()).collect();
    let (mean, sd) = mean_sd(&cps);
    let se = sd / (cps.len() as f64).sqrt();
    assert!((mean - truth).abs() < 3.0 * se, "mean {mean} truth {truth} se {se}");
    assert!((sd / truth - 0.02).abs() < 0.005, "relative sd {}", sd / truth);
}

#[test]
fn per_model_error_below_five_sigma_over_root_n() {
    let sigma = 0.03;
    let models = [profile(2), profile(5)];
    let mut ok = 0;
    let trials = 120;
    for seed in 0..trials {
        let f = fleet(seed, vec![queue_spec("S", "q", vec![(models[0].clone(), 0.4), (models[1].clone(), 0.6)], LoadDistribution::FULL, DeclaredPolicy::Accurate)]);
        let recs = simulate_benchmarks(&f, &params(400.0, sigma)).unwrap();
        let all_within = models.iter().all(|m| {
            let cps: Vec<f64> = recs.iter().filter(|r| r.cpu_model == m.model).map(|r| r.corepower()).collect();
            let truth = m.true_corepower_at_full_load;
            let n = cps.len() as f64;
            let mean = cps.iter().sum::<f64>() / n;
            (mean - truth).abs() < 5.0 * sigma * truth / n.sqrt()
        });
        ok += usize::from(all_within);
    }
    assert!(ok as f64 >= 0.99 * trials as f64, "{ok}/{trials}");
}

#[test]
fn noiseless_full_load_recovers_oracle() {
    let cfg = FleetConfig {
        sites: 20,
        load_distributions: vec![WeightedLoad { low: 1.0, high: 1.0, share: 1.0 }],
        clone_fraction: 0.5,
        inherit_fraction: 0.5,
        discrepant_fraction: 0.3,
        simulation: params(2000.0, 0.0),
        ..FleetConfig::default()
    };
    for seed in [1, 2, 3] {
        let fleet = generate_fleet(&cfg, seed).unwrap();
        let out = simulate(&fleet, &cfg.simulation).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let inputs = ingest_output(&out, dir.path());
        let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
        assert_eq!(report.rows.len(), out.oracle.len());
        for row in &report.rows {
            let oracle = &out.oracle[&row.queue];
            let audit = row.audit.as_ref().expect("every simulated queue is audited");
            assert!(
                (audit.relative_change - oracle.true_relative_change).abs() < 1e-6,
                "{}: {} vs {}",
                row.queue,
                audit.relative_change,
                oracle.true_relative_change
            );
            assert!((audit.runtime_corepower - oracle.true_runtime_corepower).abs() < 1e-6);
        }
    }
}

#[test]
fn output_independent_of_queue_order() {
    let make = |rev: bool| {
        let mut qs = vec![
            queue_spec("A", "q1", vec![(profile(3), 0.3), (profile(6), 0.7)], LoadDistribution { low: 0.2, high: 1.0 }, DeclaredPolicy::Accurate),
            queue_spec("B", "q1", vec![(profile(1), 1.0)], LoadDistribution { low: 0.5, high: 1.0 }, DeclaredPolicy::Scaled { factor: 0.6 }),
            queue_spec("C", "q2", vec![(profile(5), 1.0)], LoadDistribution::FULL, DeclaredPolicy::StaleCloned { source: QueueId::new("B", "q1").unwrap() }),
        ];
        if rev {
            qs.reverse();
        }
        fleet(77, qs)
    };
    let by_queue = |rev: bool| {
        let out = simulate(&make(rev), &params(200.0, 0.02)).unwrap();
        let mut recs: BTreeMap<QueueId, Vec<String>> = BTreeMap::new();
        for r in &out.benchmark_records {
            recs.entry(r.queue.clone()).or_default().push(serde_json::to_string(r).unwrap());
        }
        for j in &out.job_records {
            recs.entry(j.queue.clone()).or_default().push(serde_json::to_string(j).unwrap());
        }
        (recs, out.oracle)
    };
    assert_eq!(by_queue(false), by_queue(true));
}

#[test]
fn fifty_queue_end_to_end_is_fast() {
    let cfg = FleetConfig {
        sites: 25,
        queues_per_site: corepower_audit::fleetsim::CountRange { min: 2, max: 2 },
        load_distributions: vec![WeightedLoad { low: 1.0, high: 1.0, share: 1.0 }],
        simulation: params(2000.0, 0.0),
        ..FleetConfig::default()
    };
    let start = Instant::now();
    let fleet = generate_fleet(&cfg, 5).unwrap();
    let out = simulate(&fleet, &cfg.simulation).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let inputs = ingest_output(&out, dir.path());
    let report = run_audit(&inputs, &AuditOptions::default(), fixed_time()).unwrap();
    assert_eq!(report.rows.len(), 50);
    assert!(report.rows.iter().all(|r| r.status == RowStatus::Audited));
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn models_are_normalized_catalog_names() {
    let p = profile(0);
    assert_eq!(p.model, CpuModelId::normalize("Intel(R) Xeon(R) CPU E5-2650 0 @ 2.00GHz").unwrap());
    assert!(p.load_response.is_strictly_decreasing());
}
