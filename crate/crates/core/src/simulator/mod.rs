//! Seeded population simulator for comparing scheduling policies.
//!
//! A run samples a closed population of devices, plans every job under the
//! chosen policy and accounts cloud GPU occupancy. Queuing is not modelled:
//! one batch of size `b` at `n` iterations occupies the GPU for
//! `n * c_batch(b) / r_cloud` seconds, however many members it has.
//!
//! Device rates come from ChaCha8 seeded with the scenario seed. Cohort `i`
//! draws from stream `i` of that generator, so adding or reordering later
//! cohorts leaves earlier cohorts' draws untouched.

mod config;
mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{
    batched_e2e_latency, e2e_latency, BatchCostCurve, CloudProfile, DeviceProfile, SlaSpec,
    LATENCY_EPS,
};
use crate::scheduler::{JobId, JobRequest, Scheduler, SchedulerError};

pub use config::{Cohort, Policy, ScenarioConfig, DEFAULT_K_DECODE, MIN_RATE};
pub use report::{
    write_jobs_csv, write_projection_csv, write_summary_csv, write_sweep_csv, JOBS_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One simulated job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub r_dev: f64,
    pub n_final: u32,
    pub batch_size: u32,
    pub latency_s: f64,
    pub feasible: bool,
}

/// Fixed-width latency histogram starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_s: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: impl IntoIterator<Item = f64>, bin_width_s: f64) -> Self {
        assert!(bin_width_s > 0.0, "bin width must be positive");
        let mut counts = vec![0u64];
        for v in values {
            let idx = (v.max(0.0) / bin_width_s).floor() as usize;
            if idx >= counts.len() {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
        }
        Self {
            bin_width_s,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `[lo, hi)` bounds of bin `i`.
    pub fn bin_bounds(&self, i: usize) -> (f64, f64) {
        (
            i as f64 * self.bin_width_s,
            (i + 1) as f64 * self.bin_width_s,
        )
    }
}

/// Bin width used for the histogram embedded in every result.
pub const DEFAULT_BIN_WIDTH_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub policy: Policy,
    pub per_job: Vec<JobRecord>,
    pub cloud_gpu_seconds: f64,
    pub latency_histogram: Histogram,
    pub sla_violations: u64,
    /// Fraction of all jobs that share a batch of size two or more.
    pub batchable_fraction: f64,
}

impl SimulationResult {
    pub fn max_n_final(&self) -> u32 {
        self.per_job.iter().map(|j| j.n_final).max().unwrap_or(0)
    }

    pub fn mean_n_final(&self) -> f64 {
        if self.per_job.is_empty() {
            return 0.0;
        }
        self.per_job
            .iter()
            .map(|j| f64::from(j.n_final))
            .sum::<f64>()
            / self.per_job.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub histogram: Histogram,
    pub jobs: u64,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub sla_violations: u64,
}

/// Draws one device per population member.
pub fn sample_population(
    cohorts: &[Cohort],
    seed: u64,
    t_network: f64,
    k_decode: f64,
) -> Vec<DeviceProfile> {
    let mut devices = Vec::with_capacity(cohorts.iter().map(|c| c.count as usize).sum());
    for (stream, cohort) in cohorts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let normal =
            Normal::new(cohort.mean_rate, cohort.std_rate).expect("cohort std is validated finite");
        for _ in 0..cohort.count {
            let r_dev = loop {
                let r = normal.sample(&mut rng);
                if r > MIN_RATE {
                    break r;
                }
            };
            devices.push(DeviceProfile {
                r_dev,
                k_decode,
                t_network,
            });
        }
    }
    devices
}

/// Runs the configured policy over a freshly sampled population.
pub fn run_policy(config: &ScenarioConfig) -> Result<SimulationResult, SimError> {
    config.validate()?;
    let devices = sample_population(
        &config.cohorts,
        config.seed,
        config.t_network,
        config.k_decode,
    );
    evaluate(config, &devices)
}

fn evaluate(
    config: &ScenarioConfig,
    devices: &[DeviceProfile],
) -> Result<SimulationResult, SimError> {
    let cloud = config.cloud_profile()?;
    let sla = config.sla()?;
    match config.policy {
        Policy::AllCloud => Ok(fixed_iterations(
            config.policy,
            sla.n_total,
            devices,
            &cloud,
            &sla,
        )),
        Policy::ConstantIteration(n) => {
            Ok(fixed_iterations(config.policy, n, devices, &cloud, &sla))
        }
        Policy::VariableIteration => {
            variable_iterations(config.policy, false, devices, cloud, &sla)
        }
        Policy::VariableIterationBatched => {
            variable_iterations(config.policy, true, devices, cloud, &sla)
        }
    }
}

fn fixed_iterations(
    policy: Policy,
    n: u32,
    devices: &[DeviceProfile],
    cloud: &CloudProfile,
    sla: &SlaSpec,
) -> SimulationResult {
    let per_job: Vec<JobRecord> = devices
        .iter()
        .enumerate()
        .map(|(i, dev)| {
            let lat = e2e_latency(n, dev, cloud, sla);
            JobRecord {
                job_id: i as u64,
                r_dev: dev.r_dev,
                n_final: n,
                batch_size: 1,
                latency_s: lat.total_s,
                feasible: lat.meets(sla.t_lim),
            }
        })
        .collect();
    let iterations = u64::from(n) * devices.len() as u64;
    finish(policy, per_job, iterations as f64 / cloud.r_cloud, sla)
}

fn variable_iterations(
    policy: Policy,
    batched: bool,
    devices: &[DeviceProfile],
    cloud: CloudProfile,
    sla: &SlaSpec,
) -> Result<SimulationResult, SimError> {
    let scheduler = Scheduler::new(cloud);
    for (i, dev) in devices.iter().enumerate() {
        scheduler.admit(
            &JobRequest {
                job_id: JobId::from_u128(i as u128),
                device: *dev,
                prompt_bytes: 0,
            },
            sla,
        )?;
    }
    if batched {
        scheduler.apply_batching(sla);
    }
    let cloud = scheduler.cloud();

    let mut per_job = Vec::with_capacity(devices.len());
    for plan in scheduler.plans() {
        let idx = plan.job_id.as_u128() as usize;
        let dev = &devices[idx];
        let lat = batched_e2e_latency(plan.n_final, plan.batch_size, dev, cloud, sla)
            .map_err(SchedulerError::from)?;
        per_job.push(JobRecord {
            job_id: idx as u64,
            r_dev: dev.r_dev,
            n_final: plan.n_final,
            batch_size: plan.batch_size,
            latency_s: lat.total_s,
            feasible: lat.meets(sla.t_lim),
        });
    }

    // Weighted iterations: each batch occupies the GPU once.
    let mut weighted = 0.0;
    for group in scheduler.groups() {
        if batched {
            for batch in &group.batches {
                let c = cloud
                    .batch_cost(batch.len() as u32)
                    .map_err(SchedulerError::from)?;
                weighted += f64::from(group.group_key) * c;
            }
        } else {
            weighted += group.workload.w_group as f64;
        }
    }
    Ok(finish(policy, per_job, weighted / cloud.r_cloud, sla))
}

fn finish(
    policy: Policy,
    per_job: Vec<JobRecord>,
    cloud_gpu_seconds: f64,
    sla: &SlaSpec,
) -> SimulationResult {
    let sla_violations = per_job
        .iter()
        .filter(|j| j.latency_s > sla.t_lim + LATENCY_EPS)
        .count() as u64;
    let batched = per_job.iter().filter(|j| j.batch_size >= 2).count();
    let batchable_fraction = if per_job.is_empty() {
        0.0
    } else {
        batched as f64 / per_job.len() as f64
    };
    let latency_histogram =
        Histogram::build(per_job.iter().map(|j| j.latency_s), DEFAULT_BIN_WIDTH_S);
    SimulationResult {
        policy,
        per_job,
        cloud_gpu_seconds,
        latency_histogram,
        sla_violations,
        batchable_fraction,
    }
}

/// Histogram plus headline statistics of a result's latencies.
pub fn summarize(result: &SimulationResult, bin_width_s: f64, t_lim: f64) -> Summary {
    let mut lat: Vec<f64> = result.per_job.iter().map(|j| j.latency_s).collect();
    lat.sort_by(f64::total_cmp);
    let histogram = Histogram::build(lat.iter().copied(), bin_width_s);
    let jobs = lat.len() as u64;
    let mean_s = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<f64>() / lat.len() as f64
    };
    Summary {
        histogram,
        jobs,
        mean_s,
        p50_s: nearest_rank(&lat, 0.50),
        p95_s: nearest_rank(&lat, 0.95),
        max_s: lat.last().copied().unwrap_or(0.0),
        sla_violations: lat.iter().filter(|&&l| l > t_lim + LATENCY_EPS).count() as u64,
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c_batch: f64,
    pub batchable_fraction: f64,
}

/// Batchable fraction as a function of the pair cost `c_batch(2)`.
///
/// Larger batch sizes in the curve are raised to at least `c` so the curve
/// stays non-decreasing.
pub fn batch_cost_sweep(
    config: &ScenarioConfig,
    c_values: &[f64],
) -> Result<Vec<SweepPoint>, SimError> {
    if c_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::Config("c values must be sorted ascending".into()));
    }
    if c_values.iter().any(|&c| !(c.is_finite() && c >= 1.0)) {
        return Err(SimError::Config("c values must be >= 1".into()));
    }
    config.validate()?;
    let devices = sample_population(
        &config.cohorts,
        config.seed,
        config.t_network,
        config.k_decode,
    );

    let scenarios: Vec<ScenarioConfig> = c_values
        .iter()
        .map(|&c| {
            let mut points = config.batch_cost_curve.points().clone();
            for (&b, v) in points.iter_mut() {
                if b >= 2 {
                    *v = v.max(c);
                }
            }
            points.insert(2, c);
            let mut scenario = config.with_policy(Policy::VariableIterationBatched);
            scenario.batch_cost_curve =
                BatchCostCurve::new(points).map_err(|e| SimError::Config(e.to_string()))?;
            scenario.max_batch = scenario.max_batch.max(2);
            Ok(scenario)
        })
        .collect::<Result<_, SimError>>()?;

    let results: Vec<Result<SweepPoint, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .zip(c_values)
            .map(|(scenario, &c)| {
                let devices = &devices;
                s.spawn(move || {
                    evaluate(scenario, devices).map(|r| SweepPoint {
                        c_batch: c,
                        batchable_fraction: r.batchable_fraction,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Moves part of one cohort onto a new device generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortMove {
    pub from_mean: f64,
    pub fraction: f64,
    pub to_mean: f64,
    pub to_std: f64,
}

/// One projection step. Fractions refer to cohort sizes before the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Migration {
    pub label: String,
    pub moves: Vec<CohortMove>,
}

pub fn load_migrations(path: &std::path::Path) -> Result<Vec<Migration>, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Applies a migration step, preserving the total population.
pub fn apply_migration(cohorts: &[Cohort], migration: &Migration) -> Result<Vec<Cohort>, SimError> {
    let before = cohorts.to_vec();
    let mut after = cohorts.to_vec();
    for mv in &migration.moves {
        if !(0.0..=1.0).contains(&mv.fraction) {
            return Err(SimError::Config(format!(
                "{}: fraction {} outside [0, 1]",
                migration.label, mv.fraction
            )));
        }
        let src = before
            .iter()
            .position(|c| same_rate(c.mean_rate, mv.from_mean))
            .ok_or_else(|| {
                SimError::Config(format!(
                    "{}: no cohort with mean rate {}",
                    migration.label, mv.from_mean
                ))
            })?;
        let moved = (f64::from(before[src].count) * mv.fraction).round() as u32;
        after[src].count -= moved.min(after[src].count);
        match after
            .iter_mut()
            .find(|c| same_rate(c.mean_rate, mv.to_mean) && same_rate(c.std_rate, mv.to_std))
        {
            Some(dst) => dst.count += moved,
            None => after.push(Cohort {
                count: moved,
                mean_rate: mv.to_mean,
                std_rate: mv.to_std,
            }),
        }
    }
    after.retain(|c| c.count > 0);
    Ok(after)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub scenario: String,
    pub policy: Policy,
    pub cloud_gpu_seconds: f64,
    /// Percentage of the same scenario's all-cloud GPU time.
    pub pct_of_all_cloud: f64,
    /// Percentage of the same scenario's constant-iteration GPU time.
    pub pct_of_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub constant_iterations: u32,
    pub scenarios: Vec<(String, ScenarioConfig)>,
    pub results: Vec<Vec<SimulationResult>>,
    pub rows: Vec<ProjectionRow>,
}

impl ProjectionReport {
    pub fn row(&self, scenario: &str, policy: Policy) -> Option<&ProjectionRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.policy == policy)
    }
}

/// Constant-iteration count to compare against: the config's own count when
/// its policy is constant, otherwise the largest count the variable scheduler
/// assigns to the base population.
pub fn reference_constant_iterations(base: &ScenarioConfig) -> Result<u32, SimError> {
    match base.policy {
        Policy::ConstantIteration(n) => Ok(n),
        _ => Ok(run_policy(&base.with_policy(Policy::VariableIteration))?.max_n_final()),
    }
}

/// Runs all four policies on the base scenario and on each cumulative migration.
pub fn projection_suite(
    base: &ScenarioConfig,
    upgrades: &[Migration],
) -> Result<ProjectionReport, SimError> {
    base.validate()?;
    let mut scenarios = vec![("base".to_string(), base.clone())];
    let mut cohorts = base.cohorts.clone();
    for m in upgrades {
        cohorts = apply_migration(&cohorts, m)?;
        let mut next = base.clone();
        next.cohorts = cohorts.clone();
        scenarios.push((m.label.clone(), next));
    }
    compare_policies(&scenarios, reference_constant_iterations(base)?)
}

/// Runs all four policies on each named scenario.
pub fn compare_policies(
    scenarios: &[(String, ScenarioConfig)],
    constant_iterations: u32,
) -> Result<ProjectionReport, SimError> {
    let policies = [
        Policy::AllCloud,
        Policy::ConstantIteration(constant_iterations),
        Policy::VariableIteration,
        Policy::VariableIterationBatched,
    ];
    let results: Vec<Result<Vec<SimulationResult>, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|(_, cfg)| {
                s.spawn(move || {
                    policies
                        .iter()
                        .map(|&p| run_policy(&cfg.with_policy(p)))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("projection worker panicked"))
            .collect()
    });
    let results: Vec<Vec<SimulationResult>> = results.into_iter().collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for ((label, _), per_policy) in scenarios.iter().zip(&results) {
        let all_cloud = per_policy[0].cloud_gpu_seconds;
        let constant = per_policy[1].cloud_gpu_seconds;
        for r in per_policy {
            rows.push(ProjectionRow {
                scenario: label.clone(),
                policy: r.policy,
                cloud_gpu_seconds: r.cloud_gpu_seconds,
                pct_of_all_cloud: percentage(r.cloud_gpu_seconds, all_cloud),
                pct_of_constant: percentage(r.cloud_gpu_seconds, constant),
            });
        }
    }
    Ok(ProjectionReport {
        constant_iterations,
        scenarios: scenarios.to_vec(),
        results,
        rows,
    })
}

fn percentage(value: f64, baseline: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * value / baseline
    } else {
        f64::NAN
    }
}

/// Result of a one-dimensional `t_lim` calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub t_lim: f64,
    pub cloud_gpu_seconds: f64,
}

/// Scans `t_lim` over `[lo, hi]` in `step` increments and returns the value
/// whose variable-iteration GPU time is closest to `target`.
pub fn calibrate_t_lim(
    config: &ScenarioConfig,
    target: f64,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Calibration, SimError> {
    if !(step > 0.0 && lo > 0.0 && hi >= lo) {
        return Err(SimError::Config("calibration range is empty".into()));
    }
    let devices = sample_population(
        &config.cohorts,
        config.seed,
        config.t_network,
        config.k_decode,
    );
    let steps = ((hi - lo) / step).round() as u64;
    let mut best: Option<Calibration> = None;
    for i in 0..=steps {
        // Round to the step grid so committed values are short decimals.
        let t_lim = ((lo + i as f64 * step) / step).round() * step;
        let mut scenario = config.with_policy(Policy::VariableIteration);
        scenario.t_lim = (t_lim * 1e6).round() / 1e6;
        let gpu = evaluate(&scenario, &devices)?.cloud_gpu_seconds;
        let better =
            best.is_none_or(|b| (gpu - target).abs() < (b.cloud_gpu_seconds - target).abs());
        if better {
            best = Some(Calibration {
                t_lim: scenario.t_lim,
                cloud_gpu_seconds: gpu,
            });
        }
    }
    Ok(best.expect("at least one calibration point"))
}
