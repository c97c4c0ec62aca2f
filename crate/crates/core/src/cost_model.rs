//! End-to-end latency model for split diffusion inference.
//!
//! A job runs `n_total` denoising iterations. The cloud runs the first
//! `n_cloud` of them at `r_cloud` iterations per second, ships the
//! intermediate latents to the device, and the device finishes the remaining
//! iterations at `r_dev` plus a decode step. The predicted latency is
//!
//! ```text
//! n_cloud / r_cloud + (n_total - n_cloud) / r_dev + t_network + k_decode / r_dev
//! ```
//!
//! With batching, the cloud term is inflated by the batch cost factor
//! `c_batch(b)`. Every function here is pure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance, in seconds, for every latency comparison.
pub const LATENCY_EPS: f64 = 1e-9;

/// Rates closer than this are treated as equal when solving for `n_cloud`.
const SINGULAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostModelError {
    #[error("invalid device profile: {0}")]
    InvalidDevice(String),
    #[error("invalid cloud profile: {0}")]
    InvalidCloud(String),
    #[error("invalid SLA: {0}")]
    InvalidSla(String),
    #[error("device and cloud rates are equal ({0} iter/s); n_cloud is undetermined")]
    SingularRates(f64),
    #[error("batch size {0} is not present in the batch cost curve")]
    UnknownBatchSize(u32),
}

/// Compute capability and link quality of one edge device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Diffusion iterations per second on the device.
    pub r_dev: f64,
    /// Decode cost in iteration-equivalents; decode seconds are `k_decode / r_dev`.
    pub k_decode: f64,
    /// Round-trip transfer time in seconds.
    pub t_network: f64,
}

impl DeviceProfile {
    pub fn new(r_dev: f64, k_decode: f64, t_network: f64) -> Result<Self, CostModelError> {
        let dev = Self {
            r_dev,
            k_decode,
            t_network,
        };
        dev.validate()?;
        Ok(dev)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        if !(self.r_dev.is_finite() && self.r_dev > 0.0) {
            return Err(CostModelError::InvalidDevice(format!(
                "r_dev must be > 0, got {}",
                self.r_dev
            )));
        }
        if !(self.k_decode.is_finite() && self.k_decode >= 0.0) {
            return Err(CostModelError::InvalidDevice(format!(
                "k_decode must be >= 0, got {}",
                self.k_decode
            )));
        }
        if !(self.t_network.is_finite() && self.t_network >= 0.0) {
            return Err(CostModelError::InvalidDevice(format!(
                "t_network must be >= 0, got {}",
                self.t_network
            )));
        }
        Ok(())
    }

    pub fn decode_seconds(&self) -> f64 {
        self.k_decode / self.r_dev
    }
}

/// Multiplicative slowdown of cloud iterations as a function of batch size.
///
/// `c(1)` is exactly 1.0 and the curve is non-decreasing in the batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u32, f64>", into = "BTreeMap<u32, f64>")]
pub struct BatchCostCurve(BTreeMap<u32, f64>);

impl BatchCostCurve {
    pub fn new(points: BTreeMap<u32, f64>) -> Result<Self, CostModelError> {
        match points.get(&1) {
            Some(&1.0) => {}
            Some(&c) => {
                return Err(CostModelError::InvalidCloud(format!(
                    "c_batch(1) must be exactly 1.0, got {c}"
                )))
            }
            None => {
                return Err(CostModelError::InvalidCloud(
                    "batch cost curve must define c_batch(1)".into(),
                ))
            }
        }
        if points.contains_key(&0) {
            return Err(CostModelError::InvalidCloud(
                "batch size 0 is not allowed".into(),
            ));
        }
        let mut prev = 1.0;
        for (&b, &c) in &points {
            if !c.is_finite() || c < prev {
                return Err(CostModelError::InvalidCloud(format!(
                    "c_batch must be finite and non-decreasing; c_batch({b}) = {c} after {prev}"
                )));
            }
            prev = c;
        }
        Ok(Self(points))
    }

    /// Curve with no batching cost at all beyond size 1.
    pub fn unbatched() -> Self {
        Self(BTreeMap::from([(1, 1.0)]))
    }

    /// Builds `{1: 1.0, 2: c2}`.
    pub fn pair(c2: f64) -> Result<Self, CostModelError> {
        Self::new(BTreeMap::from([(1, 1.0), (2, c2)]))
    }

    pub fn get(&self, b: u32) -> Option<f64> {
        self.0.get(&b).copied()
    }

    pub fn points(&self) -> &BTreeMap<u32, f64> {
        &self.0
    }

    pub fn max_defined(&self) -> u32 {
        self.0.keys().next_back().copied().unwrap_or(1)
    }
}

impl TryFrom<BTreeMap<u32, f64>> for BatchCostCurve {
    type Error = CostModelError;

    fn try_from(points: BTreeMap<u32, f64>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<BatchCostCurve> for BTreeMap<u32, f64> {
    fn from(curve: BatchCostCurve) -> Self {
        curve.0
    }
}

/// Throughput and batching behaviour of the cloud GPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudProfile {
    pub r_cloud: f64,
    pub batch_cost_curve: BatchCostCurve,
    pub max_batch: u32,
}

impl CloudProfile {
    pub fn new(
        r_cloud: f64,
        batch_cost_curve: BatchCostCurve,
        max_batch: u32,
    ) -> Result<Self, CostModelError> {
        let cloud = Self {
            r_cloud,
            batch_cost_curve,
            max_batch,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// A cloud that never batches.
    pub fn unbatched(r_cloud: f64) -> Result<Self, CostModelError> {
        Self::new(r_cloud, BatchCostCurve::unbatched(), 1)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        if !(self.r_cloud.is_finite() && self.r_cloud > 0.0) {
            return Err(CostModelError::InvalidCloud(format!(
                "r_cloud must be > 0, got {}",
                self.r_cloud
            )));
        }
        if self.max_batch < 1 {
            return Err(CostModelError::InvalidCloud(
                "max_batch must be >= 1".into(),
            ));
        }
        // Re-run the curve checks in case the profile was built field by field.
        BatchCostCurve::new(self.batch_cost_curve.0.clone())?;
        Ok(())
    }

    pub fn batch_cost(&self, b: u32) -> Result<f64, CostModelError> {
        if b < 1 || b > self.max_batch {
            return Err(CostModelError::UnknownBatchSize(b));
        }
        self.batch_cost_curve
            .get(b)
            .ok_or(CostModelError::UnknownBatchSize(b))
    }
}

/// Latency target and iteration budget of a job class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaSpec {
    /// End-to-end latency limit in seconds.
    pub t_lim: f64,
    /// Iterations needed for a full-quality result.
    pub n_total: u32,
    /// Granularity of the cloud iteration count.
    pub n_step: u32,
}

impl SlaSpec {
    pub fn new(t_lim: f64, n_total: u32, n_step: u32) -> Result<Self, CostModelError> {
        let sla = Self {
            t_lim,
            n_total,
            n_step,
        };
        sla.validate()?;
        Ok(sla)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        if !(self.t_lim.is_finite() && self.t_lim > 0.0) {
            return Err(CostModelError::InvalidSla(format!(
                "t_lim must be > 0, got {}",
                self.t_lim
            )));
        }
        if self.n_total == 0 {
            return Err(CostModelError::InvalidSla("n_total must be > 0".into()));
        }
        if self.n_step == 0 || self.n_step > self.n_total {
            return Err(CostModelError::InvalidSla(format!(
                "n_step must lie in [1, n_total = {}], got {}",
                self.n_total, self.n_step
            )));
        }
        Ok(())
    }
}

/// Predicted or measured latency split into its four terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub cloud_s: f64,
    pub device_s: f64,
    pub network_s: f64,
    pub decode_s: f64,
    pub total_s: f64,
}

impl LatencyBreakdown {
    pub fn from_parts(cloud_s: f64, device_s: f64, network_s: f64, decode_s: f64) -> Self {
        Self {
            cloud_s,
            device_s,
            network_s,
            decode_s,
            total_s: cloud_s + device_s + network_s + decode_s,
        }
    }

    pub fn meets(&self, t_lim: f64) -> bool {
        self.total_s <= t_lim + LATENCY_EPS
    }
}

/// Work attributed to one iteration group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupWorkload {
    pub n_task: u64,
    pub n_group: u32,
    pub w_group: u64,
}

/// Predicted latency when the cloud runs `n_cloud` of the iterations unbatched.
///
/// `n_cloud` must lie in `[0, sla.n_total]`.
pub fn e2e_latency(
    n_cloud: u32,
    dev: &DeviceProfile,
    cloud: &CloudProfile,
    sla: &SlaSpec,
) -> LatencyBreakdown {
    latency_with_factor(n_cloud, 1.0, dev, cloud, sla)
}

/// Predicted latency when the job shares the GPU in a batch of size `b`.
pub fn batched_e2e_latency(
    n_cloud: u32,
    b: u32,
    dev: &DeviceProfile,
    cloud: &CloudProfile,
    sla: &SlaSpec,
) -> Result<LatencyBreakdown, CostModelError> {
    let factor = cloud.batch_cost(b)?;
    Ok(latency_with_factor(n_cloud, factor, dev, cloud, sla))
}

fn latency_with_factor(
    n_cloud: u32,
    factor: f64,
    dev: &DeviceProfile,
    cloud: &CloudProfile,
    sla: &SlaSpec,
) -> LatencyBreakdown {
    debug_assert!(
        n_cloud <= sla.n_total,
        "n_cloud {n_cloud} > n_total {}",
        sla.n_total
    );
    let n_cloud = n_cloud.min(sla.n_total);
    LatencyBreakdown::from_parts(
        f64::from(n_cloud) * factor / cloud.r_cloud,
        f64::from(sla.n_total - n_cloud) / dev.r_dev,
        dev.t_network,
        dev.decode_seconds(),
    )
}

/// Real-valued cloud iteration count at which the predicted latency equals `t_lim`.
///
/// The result is not clamped and may fall outside `[0, n_total]`.
pub fn solve_n_cloud(
    dev: &DeviceProfile,
    cloud: &CloudProfile,
    sla: &SlaSpec,
) -> Result<f64, CostModelError> {
    let denom = dev.r_dev - cloud.r_cloud;
    if denom.abs() < SINGULAR_EPS {
        return Err(CostModelError::SingularRates(dev.r_dev));
    }
    let n_total = f64::from(sla.n_total);
    let scale = cloud.r_cloud * dev.r_dev / denom;
    Ok(scale * (sla.t_lim - dev.t_network) - cloud.r_cloud * (n_total + dev.k_decode) / denom)
}

/// Smallest multiple of `n_step` that is at least `n_cloud_real`, clamped to `[0, n_total]`.
pub fn quantize_iterations(n_cloud_real: f64, sla: &SlaSpec) -> u32 {
    if n_cloud_real.is_nan() {
        return sla.n_total;
    }
    let demand = n_cloud_real.max(0.0);
    let step = f64::from(sla.n_step);
    let steps = (demand / step).ceil();
    let n = steps * step;
    if n >= f64::from(sla.n_total) {
        sla.n_total
    } else {
        n as u32
    }
}

pub fn group_workload(n_task: u64, n_group: u32) -> GroupWorkload {
    GroupWorkload {
        n_task,
        n_group,
        w_group: n_task * u64::from(n_group),
    }
}

/// True when the total outstanding work has dropped strictly below `threshold`
/// iterations and GPU capacity can be released.
pub fn scale_down_signal(groups: &[GroupWorkload], threshold: u64) -> bool {
    let total: u64 = groups.iter().map(|g| g.w_group).sum();
    total < threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(r: f64) -> CloudProfile {
        CloudProfile::new(r, BatchCostCurve::pair(1.6).unwrap(), 2).unwrap()
    }

    fn sla(t_lim: f64) -> SlaSpec {
        SlaSpec::new(t_lim, 50, 5).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn all_cloud_job_costs_point_eight_seconds_of_gpu() {
        let dev = DeviceProfile::new(2.25, 0.0, 0.3).unwrap();
        let lat = e2e_latency(50, &dev, &cloud(62.5), &sla(10.0));
        assert!(close(lat.cloud_s, 0.8));
        assert!(close(lat.device_s, 0.0));
        assert!(close(lat.total_s, 1.1));
    }

    #[test]
    fn all_local_job_is_device_time_only() {
        let dev = DeviceProfile::new(2.25, 0.0, 0.0).unwrap();
        let lat = e2e_latency(0, &dev, &cloud(62.5), &sla(10.0));
        assert!(close(lat.total_s, 50.0 / 2.25));
        assert_eq!(lat.cloud_s, 0.0);
        assert_eq!(lat.network_s, 0.0);
    }

    #[test]
    fn mixed_split_sums_four_terms() {
        let dev = DeviceProfile::new(2.25, 2.0, 0.3).unwrap();
        let lat = e2e_latency(40, &dev, &cloud(62.5), &sla(10.0));
        let expected = 40.0 / 62.5 + 10.0 / 2.25 + 0.3 + 2.0 / 2.25;
        assert!(close(lat.total_s, expected));
        assert!((lat.total_s - 6.27333).abs() < 1e-5);
    }

    #[test]
    fn solve_recovers_forty_iterations() {
        let dev = DeviceProfile::new(2.25, 2.0, 0.3).unwrap();
        let c = cloud(62.5);
        let t_lim = e2e_latency(40, &dev, &c, &sla(10.0)).total_s;
        let n = solve_n_cloud(&dev, &c, &sla(t_lim)).unwrap();
        assert!((n - 40.0).abs() < 1e-9, "got {n}");
    }

    #[test]
    fn solve_is_non_positive_when_local_suffices() {
        let dev = DeviceProfile::new(10.0, 0.0, 0.0).unwrap();
        let n = solve_n_cloud(&dev, &cloud(62.5), &sla(10.0)).unwrap();
        assert!(n <= 0.0, "got {n}");
    }

    #[test]
    fn equal_rates_are_singular() {
        let dev = DeviceProfile::new(5.0, 2.0, 0.3).unwrap();
        assert_eq!(
            solve_n_cloud(&dev, &cloud(5.0), &sla(10.0)),
            Err(CostModelError::SingularRates(5.0))
        );
    }

    #[test]
    fn quantize_examples() {
        let s = sla(10.0);
        assert_eq!(quantize_iterations(37.2, &s), 40);
        assert_eq!(quantize_iterations(40.0, &s), 40);
        assert_eq!(quantize_iterations(48.7, &s), 50);
        assert_eq!(quantize_iterations(-3.0, &s), 0);
        assert_eq!(quantize_iterations(0.0, &s), 0);
        assert_eq!(quantize_iterations(1e9, &s), 50);
    }

    #[test]
    fn quantize_clamps_to_n_total_when_step_does_not_divide() {
        let s = SlaSpec::new(10.0, 48, 5).unwrap();
        assert_eq!(quantize_iterations(46.0, &s), 48);
        assert_eq!(quantize_iterations(44.5, &s), 45);
    }

    #[test]
    fn batched_cost_inflates_cloud_term_only() {
        let dev = DeviceProfile::new(2.25, 2.0, 0.3).unwrap();
        let c = cloud(62.5);
        let s = sla(10.0);
        let lat = batched_e2e_latency(40, 2, &dev, &c, &s).unwrap();
        assert!(close(lat.cloud_s, 1.024));
        let base = e2e_latency(40, &dev, &c, &s);
        assert_eq!(lat.device_s, base.device_s);
        assert_eq!(lat.decode_s, base.decode_s);

        let c2 = CloudProfile::new(62.5, BatchCostCurve::pair(2.0).unwrap(), 2).unwrap();
        let lat = batched_e2e_latency(40, 2, &dev, &c2, &s).unwrap();
        assert!(close(lat.cloud_s, 1.28));
    }

    #[test]
    fn batch_of_one_matches_unbatched() {
        let dev = DeviceProfile::new(1.7, 3.0, 0.25).unwrap();
        let c = cloud(40.0);
        let s = sla(20.0);
        for n in 0..=50 {
            assert_eq!(
                batched_e2e_latency(n, 1, &dev, &c, &s).unwrap(),
                e2e_latency(n, &dev, &c, &s)
            );
        }
    }

    #[test]
    fn unknown_batch_size_is_rejected() {
        let dev = DeviceProfile::new(2.0, 2.0, 0.3).unwrap();
        let c = cloud(62.5);
        assert_eq!(
            batched_e2e_latency(10, 3, &dev, &c, &sla(10.0)),
            Err(CostModelError::UnknownBatchSize(3))
        );
        let wide = CloudProfile::new(62.5, BatchCostCurve::pair(1.6).unwrap(), 4).unwrap();
        assert_eq!(
            batched_e2e_latency(10, 3, &dev, &wide, &sla(10.0)),
            Err(CostModelError::UnknownBatchSize(3))
        );
    }

    #[test]
    fn workload_and_scale_down() {
        assert_eq!(group_workload(10, 40).w_group, 400);
        assert_eq!(group_workload(0, 45).w_group, 0);
        let all = group_workload(1000, 45);
        assert_eq!(all.w_group, 45_000);
        assert!(close(all.w_group as f64 / 62.5, 720.0));

        assert!(scale_down_signal(&[], 1));
        let g = |w| GroupWorkload {
            n_task: 1,
            n_group: w as u32,
            w_group: w,
        };
        assert!(!scale_down_signal(&[g(400), g(300)], 700));
        assert!(scale_down_signal(&[g(400), g(299)], 700));
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        assert!(DeviceProfile::new(0.0, 0.0, 0.0).is_err());
        assert!(DeviceProfile::new(1.0, -1.0, 0.0).is_err());
        assert!(DeviceProfile::new(1.0, 0.0, -0.1).is_err());
        assert!(SlaSpec::new(10.0, 50, 0).is_err());
        assert!(SlaSpec::new(10.0, 50, 51).is_err());
        assert!(SlaSpec::new(0.0, 50, 5).is_err());
        assert!(BatchCostCurve::new(BTreeMap::from([(1, 1.1)])).is_err());
        assert!(BatchCostCurve::new(BTreeMap::from([(1, 1.0), (2, 1.6), (3, 1.5)])).is_err());
        assert!(BatchCostCurve::new(BTreeMap::from([(2, 1.6)])).is_err());
    }

    #[test]
    fn curve_deserializes_from_string_keys() {
        let curve: BatchCostCurve = serde_json::from_str(r#"{"1": 1.0, "2": 1.6}"#).unwrap();
        assert_eq!(curve.get(2), Some(1.6));
        assert!(serde_json::from_str::<BatchCostCurve>(r#"{"1": 1.2}"#).is_err());
    }
}
