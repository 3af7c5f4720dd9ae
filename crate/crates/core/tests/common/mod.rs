#![allow(dead_code)]

use std::path::Path;

use chrono::{DateTime, Utc};
use corepower_audit::fleetsim::{
    builtin_catalog, CpuProfile, DeclaredPolicy, FleetSpec, LoadDistribution, QueueModel, QueueSpec,
    SimOutput, SiteSpec, BENCHMARKS_FILE, DECLARED_FILE, JOBS_FILE,
};
use corepower_audit::ingest::IngestOptions;
use corepower_audit::{AuditInputs, QueueId};

pub fn fixed_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_760_000_000, 0).unwrap()
}

pub fn profile(index: usize) -> CpuProfile {
    builtin_catalog().remove(index)
}

pub fn queue_spec(
    site: &str,
    queue: &str,
    models: Vec<(CpuProfile, f64)>,
    load: LoadDistribution,
    declared: DeclaredPolicy,
) -> QueueSpec {
    QueueSpec {
        id: QueueId::new(site, queue).unwrap(),
        models: models
            .into_iter()
            .map(|(profile, job_share)| QueueModel { profile, servers: 4, job_share })
            .collect(),
        declared,
        load,
        jobs_per_hour: 1.0,
        cloned: false,
    }
}

/// One site per queue, named after the queue's site.
pub fn fleet(seed: u64, queues: Vec<QueueSpec>) -> FleetSpec {
    let mut sites: Vec<SiteSpec> = Vec::new();
    for q in queues {
        match sites.iter_mut().find(|s| s.name == q.id.site) {
            Some(s) => s.queues.push(q),
            None => sites.push(SiteSpec { name: q.id.site.clone(), queues: vec![q] }),
        }
    }
    FleetSpec { seed, sites }
}

/// Round-trip through the on-disk formats, as the command-line tool does.
pub fn ingest_output(output: &SimOutput, dir: &Path) -> AuditInputs {
    output.write_dir(dir).unwrap();
    AuditInputs::load(
        &dir.join(BENCHMARKS_FILE),
        &dir.join(JOBS_FILE),
        &dir.join(DECLARED_FILE),
        &IngestOptions::default(),
    )
    .unwrap()
}
