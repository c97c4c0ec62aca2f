use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::cost_model::{BatchCostCurve, CloudProfile, SlaSpec};

/// Device rates below this are redrawn.
pub const MIN_RATE: f64 = 0.05;

/// Decode cost used when a scenario does not state one.
pub const DEFAULT_K_DECODE: f64 = 2.0;

fn default_k_decode() -> f64 {
    DEFAULT_K_DECODE
}

/// A group of devices whose diffusion rates follow one normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub count: u32,
    pub mean_rate: f64,
    pub std_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    AllCloud,
    ConstantIteration(u32),
    VariableIteration,
    VariableIterationBatched,
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::AllCloud => "all_cloud".to_string(),
            Policy::ConstantIteration(n) => format!("constant_iteration_{n}"),
            Policy::VariableIteration => "variable_iteration".to_string(),
            Policy::VariableIterationBatched => "variable_iteration_batched".to_string(),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Policy {
    type Err = SimError;

    /// Accepts `all-cloud`, `constant:<n>`, `variable` and `variable-batched`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        match s.as_str() {
            "all-cloud" | "allcloud" => Ok(Policy::AllCloud),
            "variable" | "variable-iteration" => Ok(Policy::VariableIteration),
            "variable-batched" | "variable-iteration-batched" => {
                Ok(Policy::VariableIterationBatched)
            }
            other => {
                let n = other
                    .strip_prefix("constant:")
                    .or_else(|| other.strip_prefix("constant-iteration:"))
                    .and_then(|n| n.parse::<u32>().ok())
                    .ok_or_else(|| SimError::Config(format!("unknown policy '{other}'")))?;
                Ok(Policy::ConstantIteration(n))
            }
        }
    }
}

/// Everything needed to reproduce one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cohorts: Vec<Cohort>,
    pub r_cloud: f64,
    pub t_network: f64,
    pub n_total: u32,
    pub n_step: u32,
    pub t_lim: f64,
    #[serde(default = "default_k_decode")]
    pub k_decode: f64,
    pub batch_cost_curve: BatchCostCurve,
    pub max_batch: u32,
    pub seed: u64,
    pub policy: Policy,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.cohorts.is_empty() {
            return Err(SimError::Config("at least one cohort is required".into()));
        }
        for (i, c) in self.cohorts.iter().enumerate() {
            if c.count < 1 {
                return Err(SimError::Config(format!("cohort {i}: count must be >= 1")));
            }
            if !(c.mean_rate.is_finite() && c.mean_rate > MIN_RATE) {
                return Err(SimError::Config(format!(
                    "cohort {i}: mean_rate must be > {MIN_RATE}, got {}",
                    c.mean_rate
                )));
            }
            if !(c.std_rate.is_finite() && c.std_rate >= 0.0) {
                return Err(SimError::Config(format!(
                    "cohort {i}: std_rate must be >= 0, got {}",
                    c.std_rate
                )));
            }
        }
        self.cloud_profile()?;
        self.sla()?;
        if !(self.t_network.is_finite() && self.t_network >= 0.0) {
            return Err(SimError::Config(format!(
                "t_network must be >= 0, got {}",
                self.t_network
            )));
        }
        if !(self.k_decode.is_finite() && self.k_decode >= 0.0) {
            return Err(SimError::Config(format!(
                "k_decode must be >= 0, got {}",
                self.k_decode
            )));
        }
        if let Policy::ConstantIteration(n) = self.policy {
            if n > self.n_total {
                return Err(SimError::Config(format!(
                    "ConstantIteration({n}) exceeds n_total = {}",
                    self.n_total
                )));
            }
        }
        Ok(())
    }

    pub fn cloud_profile(&self) -> Result<CloudProfile, SimError> {
        CloudProfile::new(self.r_cloud, self.batch_cost_curve.clone(), self.max_batch)
            .map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn sla(&self) -> Result<SlaSpec, SimError> {
        SlaSpec::new(self.t_lim, self.n_total, self.n_step)
            .map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn population_size(&self) -> usize {
        self.cohorts.iter().map(|c| c.count as usize).sum()
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }
}
