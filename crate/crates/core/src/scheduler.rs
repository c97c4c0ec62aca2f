//! Admission layer: turns job requests into cloud iteration counts, keeps
//! jobs grouped by that count, and packs groups into batches that still meet
//! every member's latency limit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{
    batched_e2e_latency, e2e_latency, group_workload, quantize_iterations, scale_down_signal,
    solve_n_cloud, CloudProfile, CostModelError, DeviceProfile, GroupWorkload, LatencyBreakdown,
    SlaSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("job {0} has already been admitted")]
    DuplicateJob(JobId),
    #[error("every group has zero workload")]
    EmptyWorkload,
    #[error(transparent)]
    CostModel(#[from] CostModelError),
}

/// Opaque 16-byte job identifier, carried verbatim on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobId(pub [u8; 16]);

impl JobId {
    pub fn from_u128(v: u128) -> Self {
        Self(v.to_be_bytes())
    }

    pub fn as_u128(&self) -> u128 {
        u128::from_be_bytes(self.0)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JobId({self})")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRequest {
    pub job_id: JobId,
    pub device: DeviceProfile,
    /// Prompt size; only the wire layer looks at it.
    pub prompt_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub job_id: JobId,
    /// Position in the scheduler's admission order.
    pub arrival_seq: u64,
    pub n_final: u32,
    pub group_key: u32,
    pub feasible: bool,
    pub predicted: LatencyBreakdown,
    pub batch_size: u32,
}

/// Jobs that share the same cloud iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationGroup {
    pub group_key: u32,
    /// Members in arrival order.
    pub members: Vec<JobId>,
    pub workload: GroupWorkload,
    /// Empty until batching has been applied.
    pub batches: Vec<Vec<JobId>>,
}

impl IterationGroup {
    pub fn new(group_key: u32) -> Self {
        Self {
            group_key,
            members: Vec::new(),
            workload: group_workload(0, group_key),
            batches: Vec::new(),
        }
    }

    fn push(&mut self, job: JobId) {
        self.members.push(job);
        self.workload = group_workload(self.members.len() as u64, self.group_key);
        self.batches.clear();
    }
}

/// Outcome of planning a single job, independent of any scheduler state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationPlan {
    pub n_final: u32,
    pub predicted: LatencyBreakdown,
    pub feasible: bool,
}

/// Chooses the cloud iteration count for one device: the smallest step
/// multiple that meets `t_lim`, or `n_total` when nothing does.
pub fn plan_iterations(dev: &DeviceProfile, cloud: &CloudProfile, sla: &SlaSpec) -> IterationPlan {
    let local_ok = e2e_latency(0, dev, cloud, sla).meets(sla.t_lim);
    let n_final = match solve_n_cloud(dev, cloud, sla) {
        Err(_) => {
            if local_ok {
                0
            } else {
                sla.n_total
            }
        }
        // The device is faster than the cloud: offloading can only add latency.
        Ok(_) if dev.r_dev > cloud.r_cloud => 0,
        Ok(n_cloud) => refine(quantize_iterations(n_cloud, sla), dev, cloud, sla),
    };
    let predicted = e2e_latency(n_final, dev, cloud, sla);
    IterationPlan {
        n_final,
        predicted,
        feasible: predicted.meets(sla.t_lim),
    }
}

/// Corrects a closed-form answer that floating rounding pushed one step off.
fn refine(mut n: u32, dev: &DeviceProfile, cloud: &CloudProfile, sla: &SlaSpec) -> u32 {
    let meets = |n: u32| e2e_latency(n, dev, cloud, sla).meets(sla.t_lim);
    while n > 0 {
        let lower = step_below(n, sla);
        if meets(lower) {
            n = lower;
        } else {
            break;
        }
    }
    while n < sla.n_total && !meets(n) {
        n = (n + sla.n_step).min(sla.n_total);
    }
    n
}

fn step_below(n: u32, sla: &SlaSpec) -> u32 {
    if !n.is_multiple_of(sla.n_step) {
        (n / sla.n_step) * sla.n_step
    } else {
        n - sla.n_step
    }
}

/// Packs a group's members into batches without changing their iteration count.
///
/// For each batch size from `max_batch` down to 2, the members (in arrival
/// order) that still meet `t_lim` at that size's cost factor are chunked into
/// full batches. Whatever is left runs alone. Members with no known device and
/// the zero-iteration group are never batched.
pub fn try_batch<F>(
    group: &IterationGroup,
    cloud: &CloudProfile,
    sla: &SlaSpec,
    devices: F,
) -> IterationGroup
where
    F: Fn(&JobId) -> Option<DeviceProfile>,
{
    let mut remaining: Vec<(usize, JobId)> = group.members.iter().copied().enumerate().collect();
    let mut batches: Vec<(usize, Vec<JobId>)> = Vec::new();

    if group.group_key > 0 {
        for b in (2..=cloud.max_batch).rev() {
            if cloud.batch_cost(b).is_err() {
                continue;
            }
            let b_len = b as usize;
            let eligible: Vec<(usize, JobId)> = remaining
                .iter()
                .copied()
                .filter(|(_, job)| {
                    devices(job).is_some_and(|dev| {
                        batched_e2e_latency(group.group_key, b, &dev, cloud, sla)
                            .is_ok_and(|lat| lat.meets(sla.t_lim))
                    })
                })
                .collect();
            let full = eligible.len() / b_len * b_len;
            if full == 0 {
                continue;
            }
            for chunk in eligible[..full].chunks(b_len) {
                batches.push((chunk[0].0, chunk.iter().map(|(_, j)| *j).collect()));
            }
            let taken: Vec<usize> = eligible[..full].iter().map(|(i, _)| *i).collect();
            remaining.retain(|(i, _)| !taken.contains(i));
        }
    }
    batches.extend(remaining.into_iter().map(|(i, j)| (i, vec![j])));
    batches.sort_by_key(|(first, _)| *first);

    IterationGroup {
        group_key: group.group_key,
        members: group.members.clone(),
        workload: group.workload,
        batches: batches.into_iter().map(|(_, b)| b).collect(),
    }
}

/// Share of total cloud work held by each group.
pub fn allocation_ratios(groups: &[IterationGroup]) -> Result<BTreeMap<u32, f64>, SchedulerError> {
    let total: u64 = groups.iter().map(|g| g.workload.w_group).sum();
    if total == 0 {
        return Err(SchedulerError::EmptyWorkload);
    }
    let mut ratios = BTreeMap::new();
    for g in groups {
        *ratios.entry(g.group_key).or_insert(0.0) += g.workload.w_group as f64 / total as f64;
    }
    Ok(ratios)
}

#[derive(Debug, Default)]
struct State {
    next_seq: u64,
    plans: HashMap<JobId, SchedulePlan>,
    devices: HashMap<JobId, DeviceProfile>,
    groups: BTreeMap<u32, IterationGroup>,
}

/// Thread-safe scheduler. Admissions are applied in a single total order.
#[derive(Debug)]
pub struct Scheduler {
    cloud: CloudProfile,
    state: RwLock<State>,
}

impl Scheduler {
    pub fn new(cloud: CloudProfile) -> Self {
        Self {
            cloud,
            state: RwLock::new(State::default()),
        }
    }

    pub fn cloud(&self) -> &CloudProfile {
        &self.cloud
    }

    pub fn admit(&self, req: &JobRequest, sla: &SlaSpec) -> Result<SchedulePlan, SchedulerError> {
        req.device.validate()?;
        sla.validate()?;
        let planned = plan_iterations(&req.device, &self.cloud, sla);

        let mut state = self.state.write().expect("scheduler lock poisoned");
        if state.plans.contains_key(&req.job_id) {
            return Err(SchedulerError::DuplicateJob(req.job_id));
        }
        let plan = SchedulePlan {
            job_id: req.job_id,
            arrival_seq: state.next_seq,
            n_final: planned.n_final,
            group_key: planned.n_final,
            feasible: planned.feasible,
            predicted: planned.predicted,
            batch_size: 1,
        };
        state.next_seq += 1;
        state.plans.insert(req.job_id, plan.clone());
        state.devices.insert(req.job_id, req.device);
        state
            .groups
            .entry(plan.group_key)
            .or_insert_with(|| IterationGroup::new(plan.group_key))
            .push(req.job_id);
        Ok(plan)
    }

    /// Re-packs every group into batches and records each plan's batch size.
    pub fn apply_batching(&self, sla: &SlaSpec) {
        let mut state = self.state.write().expect("scheduler lock poisoned");
        let State {
            plans,
            devices,
            groups,
            ..
        } = &mut *state;
        for group in groups.values_mut() {
            let packed = try_batch(group, &self.cloud, sla, |id| devices.get(id).copied());
            for batch in &packed.batches {
                for id in batch {
                    if let Some(plan) = plans.get_mut(id) {
                        plan.batch_size = batch.len() as u32;
                    }
                }
            }
            *group = packed;
        }
    }

    pub fn plan(&self, job_id: &JobId) -> Option<SchedulePlan> {
        self.state
            .read()
            .expect("scheduler lock poisoned")
            .plans
            .get(job_id)
            .cloned()
    }

    /// All plans in admission order.
    pub fn plans(&self) -> Vec<SchedulePlan> {
        let state = self.state.read().expect("scheduler lock poisoned");
        let mut plans: Vec<_> = state.plans.values().cloned().collect();
        plans.sort_by_key(|p| p.arrival_seq);
        plans
    }

    pub fn device(&self, job_id: &JobId) -> Option<DeviceProfile> {
        self.state
            .read()
            .expect("scheduler lock poisoned")
            .devices
            .get(job_id)
            .copied()
    }

    /// Groups ordered by iteration count.
    pub fn groups(&self) -> Vec<IterationGroup> {
        self.state
            .read()
            .expect("scheduler lock poisoned")
            .groups
            .values()
            .cloned()
            .collect()
    }

    pub fn allocation_ratios(&self) -> Result<BTreeMap<u32, f64>, SchedulerError> {
        allocation_ratios(&self.groups())
    }

    pub fn scale_down_signal(&self, threshold: u64) -> bool {
        let workloads: Vec<GroupWorkload> = self.groups().iter().map(|g| g.workload).collect();
        scale_down_signal(&workloads, threshold)
    }

    pub fn len(&self) -> usize {
        self.state
            .read()
            .expect("scheduler lock poisoned")
            .plans
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
