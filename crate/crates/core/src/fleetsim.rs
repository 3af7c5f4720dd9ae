//! Deterministic synthetic grid.
//!
//! A [`FleetSpec`] fixes sites, queues, the CPU profiles behind each queue
//! with their true corepower and load response, and how each queue's
//! declared value was produced. Simulation turns it into benchmark records,
//! job accounting and a registry snapshot in the ingest formats, plus an
//! oracle computed analytically from the fleet description alone.
//!
//! Every queue draws from its own RNG stream, seeded from the fleet seed and
//! the queue id, so per-queue generation is independent of iteration order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SimError;
use crate::ingest::{write_benchmark_records, write_declared, write_job_records};
use crate::model::{BenchmarkRecord, CpuModelId, DeclaredEntry, JobRecord, QueueId};

pub const BENCHMARKS_FILE: &str = "benchmarks.jsonl";
pub const JOBS_FILE: &str = "jobs.jsonl";
pub const DECLARED_FILE: &str = "declared.csv";
pub const ORACLE_FILE: &str = "oracle.json";
pub const FLEET_FILE: &str = "fleet.json";

/// Load/core range a response curve must cover.
pub const LOAD_DOMAIN_MAX: f64 = 2.5;

/// First benchmark tick: 2024-01-01T00:00:00Z.
const SIM_EPOCH_SECS: i64 = 1_704_067_200;

/// HS23/HS06 ratio below which a one-to-one HS06 carry-over is itself a
/// critical discrepancy. Discrepant queues on such hardware use it.
const LEGACY_ERA_CUTOFF: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    X86,
    Arm,
}

/// Piecewise-linear performance multiplier as a function of load/core.
///
/// Points are `(load_per_core, multiplier)` with strictly increasing load,
/// starting at 0 and reaching at least [`LOAD_DOMAIN_MAX`]. Outside the
/// points the curve is held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct LoadResponse {
    points: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for LoadResponse {
    type Error = String;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self, String> {
        LoadResponse::new(points)
    }
}

impl From<LoadResponse> for Vec<(f64, f64)> {
    fn from(r: LoadResponse) -> Self {
        r.points
    }
}

impl LoadResponse {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, String> {
        let (Some(first), Some(last)) = (points.first(), points.last()) else {
            return Err("load response needs at least one point".into());
        };
        if first.0 != 0.0 || last.0 < LOAD_DOMAIN_MAX {
            return Err(format!("load response must span [0, {LOAD_DOMAIN_MAX}]"));
        }
        if points.windows(2).any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater)) {
            return Err("load response points must have increasing load".into());
        }
        if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite() || y <= 0.0) {
            return Err("load response multipliers must be positive".into());
        }
        Ok(LoadResponse { points })
    }

    /// Strong decline through the SMT region, 1.0 at load/core 2.
    pub fn x86_smt() -> Self {
        LoadResponse::new(vec![(0.0, 1.5), (1.0, 1.4), (2.0, 1.0), (2.5, 0.85)]).unwrap()
    }

    /// Turbo headroom below full load, 1.0 at load/core 1, steep decline
    /// when oversubscribed.
    pub fn x86_no_smt() -> Self {
        LoadResponse::new(vec![(0.0, 1.25), (1.0, 1.0), (2.0, 0.6), (2.5, 0.5)]).unwrap()
    }

    /// Nearly constant; 1.0 at load/core 1.
    pub fn arm_flat() -> Self {
        LoadResponse::new(vec![(0.0, 1.001), (1.0, 1.0), (2.5, 0.9985)]).unwrap()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn eval(&self, load: f64) -> f64 {
        let pts = &self.points;
        if load <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if load <= x1 {
                return y0 + (y1 - y0) * (load - x0) / (x1 - x0);
            }
        }
        pts[pts.len() - 1].1
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut area = 0.0;
        for w in self.points.windows(2) {
            let lo = a.max(w[0].0);
            let hi = b.min(w[1].0);
            if hi > lo {
                area += (self.eval(lo) + self.eval(hi)) / 2.0 * (hi - lo);
            }
        }
        let (x_last, y_last) = self.points[self.points.len() - 1];
        if b > x_last {
            area += y_last * (b - a.max(x_last));
        }
        area
    }

    /// Exact mean of the multiplier over a uniform load in `[a, b]`.
    pub fn mean_over(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.eval(a);
        }
        self.integral(a, b) / (b - a)
    }
}

fn default_base_freq() -> f64 {
    2400.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuProfile {
    pub model: CpuModelId,
    pub architecture: Architecture,
    /// HS23 per core delivered at the nominal full-load mark.
    pub true_corepower_at_full_load: f64,
    pub load_response: LoadResponse,
    pub physical_cores: u32,
    pub smt_enabled: bool,
    /// HS23/HS06 ratio of the CPU's generation.
    pub era_scaling: f64,
    #[serde(default = "default_base_freq")]
    pub base_freq_mhz: f64,
}

impl CpuProfile {
    /// Load/core of a fully loaded host: 2 with SMT, 1 without.
    pub fn full_load_mark(&self) -> f64 {
        if self.smt_enabled {
            2.0
        } else {
            1.0
        }
    }

    pub fn online_cores(&self) -> u32 {
        if self.smt_enabled {
            self.physical_cores * 2
        } else {
            self.physical_cores
        }
    }

    /// Expected per-run corepower under a uniform load distribution.
    pub fn expected_corepower(&self, load: &LoadDistribution) -> f64 {
        let mark = self.full_load_mark();
        self.true_corepower_at_full_load * self.load_response.mean_over(load.low * mark, load.high * mark)
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(format!("profile {}: {m}", self.model)));
        if !(self.true_corepower_at_full_load.is_finite() && self.true_corepower_at_full_load > 0.0) {
            return bad("true_corepower_at_full_load > 0");
        }
        if !(self.era_scaling.is_finite() && self.era_scaling > 0.0) {
            return bad("era_scaling > 0");
        }
        if self.physical_cores < 1 {
            return bad("physical_cores ≥ 1");
        }
        Ok(())
    }
}

/// Built-in CPU catalog: a 2012 part with a 0.7 HS23/HS06 ratio, an SMT-off
/// host, three modern x86 generations and an ARM Neoverse-N1.
pub fn builtin_catalog() -> Vec<CpuProfile> {
    let p = |name: &str, arch, cp, cores, smt, era, freq| CpuProfile {
        model: CpuModelId::normalize(name).unwrap(),
        architecture: arch,
        true_corepower_at_full_load: cp,
        load_response: match (arch, smt) {
            (Architecture::Arm, _) => LoadResponse::arm_flat(),
            (Architecture::X86, true) => LoadResponse::x86_smt(),
            (Architecture::X86, false) => LoadResponse::x86_no_smt(),
        },
        physical_cores: cores,
        smt_enabled: smt,
        era_scaling: era,
        base_freq_mhz: freq,
    };
    use Architecture::{Arm, X86};
    vec![
        p("Intel(R) Xeon(R) CPU E5-2650 0 @ 2.00GHz", X86, 7.0, 16, true, 0.7, 2000.0),
        p("Intel(R) Xeon(R) CPU E5-2630 v3 @ 2.40GHz", X86, 9.5, 16, false, 0.85, 2400.0),
        p("Intel(R) Xeon(R) CPU E5-2680 v4 @ 2.40GHz", X86, 11.0, 28, true, 0.9, 2400.0),
        p("Intel(R) Xeon(R) Gold 6248 CPU @ 2.50GHz", X86, 13.5, 40, true, 1.0, 2500.0),
        p("AMD EPYC 7742 64-Core Processor", X86, 15.5, 64, true, 1.0, 2250.0),
        p("AMD EPYC 7763 64-Core Processor", X86, 17.0, 64, true, 1.0, 2450.0),
        p("Neoverse-N1", Arm, 14.0, 80, false, 1.0, 3000.0),
    ]
}

/// Uniform load, expressed as a fraction of the host's full-load mark.
///
/// This is a stand-in: no measured site load distribution is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadDistribution {
    pub low: f64,
    pub high: f64,
}

impl LoadDistribution {
    pub const FULL: LoadDistribution = LoadDistribution { low: 1.0, high: 1.0 };

    fn validate(&self) -> Result<(), SimError> {
        let max = LOAD_DOMAIN_MAX / 2.0;
        if !(self.low >= 0.0 && self.low <= self.high && self.high <= max) {
            return Err(SimError::InvalidConfig(format!(
                "load distribution needs 0 ≤ low ≤ high ≤ {max}"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.high > self.low {
            rng.random_range(self.low..self.high)
        } else {
            self.low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueModel {
    pub profile: CpuProfile,
    pub servers: u32,
    pub job_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeclaredPolicy {
    Accurate,
    /// Inherits the declared value of the queue it was cloned from.
    StaleCloned { source: QueueId },
    Scaled { factor: f64 },
}

impl DeclaredPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            DeclaredPolicy::Accurate => "ACCURATE",
            DeclaredPolicy::StaleCloned { .. } => "STALE_CLONED",
            DeclaredPolicy::Scaled { .. } => "SCALED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub id: QueueId,
    pub models: Vec<QueueModel>,
    pub declared: DeclaredPolicy,
    pub load: LoadDistribution,
    pub jobs_per_hour: f64,
    /// Registry entry was copied from another queue. Only stale clones
    /// carry a wrong value; the rest were refreshed after cloning.
    #[serde(default)]
    pub cloned: bool,
}

impl QueueSpec {
    /// Share-weighted expected corepower: what an audit converges to.
    pub fn expected_runtime_corepower(&self) -> f64 {
        let (num, den) = self.models.iter().fold((0.0, 0.0), |(n, d), m| {
            (n + m.job_share * m.profile.expected_corepower(&self.load), d + m.job_share)
        });
        num / den
    }

    /// Share-weighted HS23/HS06 ratio of the queue's hardware.
    pub fn era_scaling(&self) -> f64 {
        self.models.iter().map(|m| m.job_share * m.profile.era_scaling).sum()
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(format!("queue {}: {m}", self.id)));
        if self.models.is_empty() {
            return bad("no CPU models".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            m.profile.validate()?;
            if !seen.insert(&m.profile.model) {
                return bad(format!("model {} listed twice", m.profile.model));
            }
            if m.servers < 1 {
                return bad("server counts must be ≥ 1".into());
            }
            if !(m.job_share.is_finite() && m.job_share > 0.0) {
                return bad("job shares must be positive".into());
            }
        }
        let total: f64 = self.models.iter().map(|m| m.job_share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("job shares sum to {total}, expected 1"));
        }
        if !(self.jobs_per_hour.is_finite() && self.jobs_per_hour > 0.0) {
            return bad("jobs_per_hour > 0".into());
        }
        if let DeclaredPolicy::Scaled { factor } = self.declared {
            if !(factor.is_finite() && factor > 0.0) {
                return bad("scale factor > 0".into());
            }
        }
        self.load.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub name: String,
    pub queues: Vec<QueueSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub seed: u64,
    pub sites: Vec<SiteSpec>,
}

impl FleetSpec {
    pub fn queues(&self) -> impl Iterator<Item = &QueueSpec> {
        self.sites.iter().flat_map(|s| s.queues.iter())
    }

    pub fn queue(&self, id: &QueueId) -> Option<&QueueSpec> {
        self.queues().find(|q| &q.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.queues().next().is_none() {
            return Err(SimError::InvalidConfig("fleet has no queues".into()));
        }
        let mut ids = BTreeSet::new();
        for site in &self.sites {
            for q in &site.queues {
                if q.id.site != site.name {
                    return Err(SimError::InvalidConfig(format!(
                        "queue {} listed under site {}",
                        q.id, site.name
                    )));
                }
                if !ids.insert(&q.id) {
                    return Err(SimError::InvalidConfig(format!("duplicate queue {}", q.id)));
                }
                q.validate()?;
            }
        }
        Ok(())
    }
}

/// Integer range, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedLoad {
    pub low: f64,
    pub high: f64,
    /// Relative frequency among queues.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub duration_hours: f64,
    pub cadence_hours: f64,
    /// Relative standard deviation of the multiplicative score noise.
    pub noise: f64,
    pub allocated_cores: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            duration_hours: 2000.0,
            cadence_hours: 4.0,
            noise: 0.02,
            allocated_cores: 8,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.cadence_hours.is_finite() && self.cadence_hours > 0.0) {
            return bad("cadence_hours > 0");
        }
        if !(self.duration_hours.is_finite() && self.duration_hours >= self.cadence_hours) {
            return bad("duration_hours ≥ cadence_hours");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise ≥ 0");
        }
        if self.allocated_cores < 1 {
            return bad("allocated_cores ≥ 1");
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration_hours / self.cadence_hours + 1e-9).floor() as usize
    }
}

/// Generator configuration; the JSON document accepted by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub sites: usize,
    pub queues_per_site: CountRange,
    pub models_per_queue: CountRange,
    pub servers_per_model: CountRange,
    pub jobs_per_hour: RateRange,
    /// Replaces the built-in CPU catalog when present.
    pub catalog: Option<Vec<CpuProfile>>,
    /// Fraction of queues cloned from another queue.
    pub clone_fraction: f64,
    /// Fraction of cloned queues that kept the source's declared value.
    pub inherit_fraction: f64,
    /// Fraction of all queues given a SCALED declared value.
    pub discrepant_fraction: f64,
    pub discrepancy_factors: Vec<f64>,
    pub load_distributions: Vec<WeightedLoad>,
    pub simulation: SimParams,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            sites: 10,
            queues_per_site: CountRange { min: 1, max: 3 },
            models_per_queue: CountRange { min: 1, max: 3 },
            servers_per_model: CountRange { min: 2, max: 40 },
            jobs_per_hour: RateRange { min: 0.2, max: 5.0 },
            catalog: None,
            clone_fraction: 0.0,
            inherit_fraction: 0.0,
            discrepant_fraction: 0.0,
            discrepancy_factors: vec![0.5, 0.6, 1.5, 1.7],
            load_distributions: vec![WeightedLoad { low: 0.3, high: 1.0, share: 1.0 }],
            simulation: SimParams::default(),
        }
    }
}

impl FleetConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: FleetConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn catalog(&self) -> Vec<CpuProfile> {
        self.catalog.clone().unwrap_or_else(builtin_catalog)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.sites == 0 {
            return bad("sites ≥ 1");
        }
        for (name, r) in [
            ("queues_per_site", self.queues_per_site),
            ("models_per_queue", self.models_per_queue),
            ("servers_per_model", self.servers_per_model),
        ] {
            if r.min == 0 || r.min > r.max {
                return Err(SimError::InvalidConfig(format!("{name} needs 1 ≤ min ≤ max")));
            }
        }
        if !(self.jobs_per_hour.min > 0.0 && self.jobs_per_hour.min <= self.jobs_per_hour.max) {
            return bad("jobs_per_hour needs 0 < min ≤ max");
        }
        let catalog = self.catalog();
        if catalog.len() < self.models_per_queue.min {
            return bad("catalog smaller than models_per_queue.min");
        }
        for p in &catalog {
            p.validate()?;
        }
        for f in [self.clone_fraction, self.inherit_fraction, self.discrepant_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        if self.discrepant_fraction > 0.0
            && (self.discrepancy_factors.is_empty()
                || self.discrepancy_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)))
        {
            return bad("discrepancy_factors must be non-empty and positive");
        }
        if self.load_distributions.is_empty()
            || self.load_distributions.iter().any(|l| !l.share.is_finite() || l.share <= 0.0)
        {
            return bad("load_distributions must be non-empty with positive shares");
        }
        for l in &self.load_distributions {
            LoadDistribution { low: l.low, high: l.high }.validate()?;
        }
        self.simulation.validate()
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Benchmarks,
    Jobs,
}

/// Sub-seed for one queue and purpose; independent of queue order.
fn queue_rng(seed: u64, stream: Stream, queue: &QueueId) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([stream as u8]);
    h.update(queue.site.as_bytes());
    h.update([0]);
    h.update(queue.queue.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
}

/// Deterministic fleet for `(config, seed)`.
pub fn generate_fleet(config: &FleetConfig, seed: u64) -> Result<FleetSpec, SimError> {
    config.validate()?;
    let catalog = config.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let load_pick = WeightedIndex::new(config.load_distributions.iter().map(|l| l.share))
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;

    let mut sites = Vec::with_capacity(config.sites);
    for s in 0..config.sites {
        let site = format!("SITE_{s:03}");
        let n_queues = rng.random_range(config.queues_per_site.min..=config.queues_per_site.max);
        let mut queues = Vec::with_capacity(n_queues);
        for j in 0..n_queues {
            let max_models = config.models_per_queue.max.min(catalog.len());
            let n_models = rng.random_range(config.models_per_queue.min..=max_models);
            let mut picked = rand::seq::index::sample(&mut rng, catalog.len(), n_models).into_vec();
            picked.sort_unstable();
            let raw: Vec<f64> = picked.iter().map(|_| rng.random_range(0.2..=1.0)).collect();
            let total: f64 = raw.iter().sum();
            let models = picked
                .iter()
                .zip(&raw)
                .map(|(&i, &r)| QueueModel {
                    profile: catalog[i].clone(),
                    servers: rng.random_range(config.servers_per_model.min..=config.servers_per_model.max)
                        as u32,
                    job_share: r / total,
                })
                .collect();
            let l = config.load_distributions[load_pick.sample(&mut rng)];
            queues.push(QueueSpec {
                id: QueueId::new(&site, &format!("QUEUE_{j}")).expect("generated ids are non-empty"),
                models,
                declared: DeclaredPolicy::Accurate,
                load: LoadDistribution { low: l.low, high: l.high },
                jobs_per_hour: rng.random_range(config.jobs_per_hour.min..=config.jobs_per_hour.max),
                cloned: false,
            });
        }
        sites.push(SiteSpec { name: site, queues });
    }

    assign_declared_policies(config, &mut sites, &mut rng)?;
    let fleet = FleetSpec { seed, sites };
    fleet.validate()?;
    Ok(fleet)
}

/// Exact-count assignment: round(fraction × n) queues per category.
fn assign_declared_policies(
    config: &FleetConfig,
    sites: &mut [SiteSpec],
    rng: &mut ChaCha8Rng,
) -> Result<(), SimError> {
    let mut slots: Vec<(usize, usize)> = sites
        .iter()
        .enumerate()
        .flat_map(|(s, site)| (0..site.queues.len()).map(move |q| (s, q)))
        .collect();
    let n = slots.len();
    slots.shuffle(rng);

    let n_cloned = (config.clone_fraction * n as f64).round() as usize;
    let n_stale = (config.inherit_fraction * n_cloned as f64).round() as usize;
    let (cloned, originals) = slots.split_at(n_cloned);
    if n_stale > 0 && originals.is_empty() {
        return Err(SimError::InvalidConfig(
            "stale clones need at least one original queue".into(),
        ));
    }
    for &(s, q) in cloned {
        sites[s].queues[q].cloned = true;
    }
    for &(s, q) in &cloned[..n_stale] {
        let (ss, sq) = originals[rng.random_range(0..originals.len())];
        let source = sites[ss].queues[sq].id.clone();
        sites[s].queues[q].declared = DeclaredPolicy::StaleCloned { source };
    }

    let n_discrepant = (config.discrepant_fraction * n as f64).round() as usize;
    let candidates: Vec<(usize, usize)> = slots[n_stale..].to_vec();
    if n_discrepant > candidates.len() {
        return Err(SimError::InvalidConfig(
            "discrepant_fraction exceeds queues left after stale clones".into(),
        ));
    }
    let mut candidates = candidates;
    candidates.shuffle(rng);
    for &(s, q) in &candidates[..n_discrepant] {
        let queue = &mut sites[s].queues[q];
        let era = queue.era_scaling();
        let factor = if era < LEGACY_ERA_CUTOFF {
            // HS06 value carried over one-to-one on old hardware.
            1.0 / era
        } else {
            config.discrepancy_factors[rng.random_range(0..config.discrepancy_factors.len())]
        };
        queue.declared = DeclaredPolicy::Scaled { factor };
    }
    Ok(())
}

fn simulate_queue_benchmarks(
    fleet_seed: u64,
    queue: &QueueSpec,
    params: &SimParams,
) -> Vec<BenchmarkRecord> {
    let mut rng = queue_rng(fleet_seed, Stream::Benchmarks, &queue.id);
    let pick = WeightedIndex::new(queue.models.iter().map(|m| m.job_share)).expect("validated shares");
    let noise = (params.noise > 0.0).then(|| Normal::new(0.0, params.noise).expect("validated noise"));
    let epoch = DateTime::<Utc>::from_timestamp(SIM_EPOCH_SECS, 0).expect("valid epoch");
    let cadence = Duration::seconds((params.cadence_hours * 3600.0).round() as i64);
    let slot = f64::from(params.allocated_cores);

    (0..params.ticks())
        .map(|tick| {
            let profile = &queue.models[pick.sample(&mut rng)].profile;
            let load_per_core = queue.load.sample(&mut rng) * profile.full_load_mark();
            let multiplier = profile.load_response.eval(load_per_core);
            let jitter = match &noise {
                Some(dist) => loop {
                    let f = 1.0 + dist.sample(&mut rng);
                    if f > 0.0 {
                        break f;
                    }
                },
                None => 1.0,
            };
            BenchmarkRecord {
                queue: queue.id.clone(),
                cpu_model: profile.model.clone(),
                timestamp: epoch + cadence * tick as i32,
                score: slot * profile.true_corepower_at_full_load * multiplier * jitter,
                allocated_cores: params.allocated_cores,
                physical_cores: profile.physical_cores,
                online_cores: profile.online_cores(),
                smt_enabled: profile.smt_enabled,
                load_avg: load_per_core * f64::from(profile.physical_cores),
                cpu_freq_avg: Some(profile.base_freq_mhz * multiplier),
                mem_used: Some(slot * 2.0),
            }
        })
        .collect()
}

/// One benchmark run per queue per cadence tick.
pub fn simulate_benchmarks(
    fleet: &FleetSpec,
    params: &SimParams,
) -> Result<Vec<BenchmarkRecord>, SimError> {
    params.validate()?;
    fleet.validate()?;
    let queues: Vec<&QueueSpec> = fleet.queues().collect();
    let per_queue: Vec<Vec<BenchmarkRecord>> = queues
        .par_iter()
        .map(|q| simulate_queue_benchmarks(fleet.seed, q, params))
        .collect();
    Ok(per_queue.into_iter().flatten().collect())
}

/// Largest-remainder apportionment with at least one job per model.
fn apportion(shares: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let remaining = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle().take(remaining) {
        counts[i] += 1;
    }
    for c in &mut counts {
        *c = (*c).max(1);
    }
    counts
}

fn simulate_queue_jobs(fleet_seed: u64, queue: &QueueSpec, duration_hours: f64) -> Vec<JobRecord> {
    let mut rng = queue_rng(fleet_seed, Stream::Jobs, &queue.id);
    let n = ((queue.jobs_per_hour * duration_hours).round() as usize).max(queue.models.len());
    let shares: Vec<f64> = queue.models.iter().map(|m| m.job_share).collect();
    let counts = apportion(&shares, n);

    let mut per_model: Vec<Vec<(f64, u32)>> = counts
        .iter()
        .map(|&c| {
            (0..c)
                .map(|_| {
                    let walltime = rng.random_range(600.0..86_400.0);
                    let cores = if rng.random_bool(0.8) { 8 } else { 1 };
                    (walltime, cores)
                })
                .collect()
        })
        .collect();

    // Rescale walltimes so per-model walltime × cores totals match the
    // configured shares exactly; the oracle then needs no sampling term.
    let totals: Vec<f64> = per_model
        .iter()
        .map(|jobs| jobs.iter().map(|(w, c)| w * f64::from(*c)).sum())
        .collect();
    let grand: f64 = totals.iter().sum();
    for ((jobs, total), share) in per_model.iter_mut().zip(&totals).zip(&shares) {
        let k = share * grand / total;
        for job in jobs.iter_mut() {
            job.0 *= k;
        }
    }

    let mut jobs: Vec<JobRecord> = per_model
        .into_iter()
        .zip(&queue.models)
        .flat_map(|(jobs, m)| {
            jobs.into_iter().map(move |(walltime, cores)| JobRecord {
                queue: queue.id.clone(),
                cpu_model: m.profile.model.clone(),
                walltime,
                cores,
            })
        })
        .collect();
    jobs.shuffle(&mut rng);
    jobs
}

/// Production-job accounting whose per-model walltime × cores totals are
/// proportional to the configured job shares.
pub fn simulate_job_accounting(
    fleet: &FleetSpec,
    duration_hours: f64,
) -> Result<Vec<JobRecord>, SimError> {
    if !(duration_hours.is_finite() && duration_hours > 0.0) {
        return Err(SimError::InvalidConfig("duration must be positive".into()));
    }
    fleet.validate()?;
    let queues: Vec<&QueueSpec> = fleet.queues().collect();
    let per_queue: Vec<Vec<JobRecord>> = queues
        .par_iter()
        .map(|q| simulate_queue_jobs(fleet.seed, q, duration_hours))
        .collect();
    Ok(per_queue.into_iter().flatten().collect())
}

fn resolve_declared(
    fleet: &FleetSpec,
    queue: &QueueSpec,
    visiting: &mut BTreeSet<QueueId>,
) -> Result<f64, SimError> {
    if !visiting.insert(queue.id.clone()) {
        return Err(SimError::CloneCycle(queue.id.clone()));
    }
    let truth = queue.expected_runtime_corepower();
    let value = match &queue.declared {
        DeclaredPolicy::Accurate => truth,
        DeclaredPolicy::Scaled { factor } => truth * factor,
        DeclaredPolicy::StaleCloned { source } => {
            let src = fleet
                .queue(source)
                .ok_or_else(|| SimError::UnknownCloneSource(queue.id.clone()))?;
            resolve_declared(fleet, src, visiting)?
        }
    };
    visiting.remove(&queue.id);
    Ok(value)
}

/// Registry snapshot implied by each queue's declared policy.
pub fn emit_declared(fleet: &FleetSpec) -> Result<Vec<DeclaredEntry>, SimError> {
    fleet
        .queues()
        .map(|q| {
            let declared_corepower = resolve_declared(fleet, q, &mut BTreeSet::new())?;
            let source = match &q.declared {
                DeclaredPolicy::StaleCloned { source } => format!("fleetsim:cloned:{source}"),
                other => format!("fleetsim:{}", other.name().to_lowercase()),
            };
            Ok(DeclaredEntry {
                queue: q.id.clone(),
                declared_corepower,
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub queue: QueueId,
    pub policy: String,
    pub true_runtime_corepower: f64,
    pub declared_corepower: f64,
    pub true_relative_change: f64,
}

/// Ground truth per queue, from the fleet spec alone.
pub fn oracle(fleet: &FleetSpec) -> Result<BTreeMap<QueueId, OracleEntry>, SimError> {
    let declared = emit_declared(fleet)?;
    Ok(fleet
        .queues()
        .zip(declared)
        .map(|(q, d)| {
            let truth = q.expected_runtime_corepower();
            (
                q.id.clone(),
                OracleEntry {
                    queue: q.id.clone(),
                    policy: q.declared.name().to_string(),
                    true_runtime_corepower: truth,
                    declared_corepower: d.declared_corepower,
                    true_relative_change: truth / d.declared_corepower - 1.0,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub benchmark_records: Vec<BenchmarkRecord>,
    pub job_records: Vec<JobRecord>,
    pub declared: Vec<DeclaredEntry>,
    pub oracle: BTreeMap<QueueId, OracleEntry>,
}

pub fn simulate(fleet: &FleetSpec, params: &SimParams) -> Result<SimOutput, SimError> {
    Ok(SimOutput {
        benchmark_records: simulate_benchmarks(fleet, params)?,
        job_records: simulate_job_accounting(fleet, params.duration_hours)?,
        declared: emit_declared(fleet)?,
        oracle: oracle(fleet)?,
    })
}

impl SimOutput {
    /// Write the ingest-format files and `oracle.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        write_benchmark_records(BufWriter::new(File::create(dir.join(BENCHMARKS_FILE))?), &self.benchmark_records)?;
        write_job_records(BufWriter::new(File::create(dir.join(JOBS_FILE))?), &self.job_records)?;
        write_declared(BufWriter::new(File::create(dir.join(DECLARED_FILE))?), &self.declared)
            .map_err(|e| SimError::Io(e.into()))?;
        let entries: Vec<&OracleEntry> = self.oracle.values().collect();
        let mut f = BufWriter::new(File::create(dir.join(ORACLE_FILE))?);
        serde_json::to_writer_pretty(&mut f, &entries)?;
        std::io::Write::write_all(&mut f, b"\n")?;
        Ok(())
    }
}
