//! Chunked action execution: replan scheduling, temporal ensembling,
//! smoothing and the policy interface.

mod ensemble;
mod policy;
mod run;
mod smooth;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ensemble::{EnsembleBuffer, Prediction, DEFAULT_DECAY};
pub use policy::{ConstantPolicy, Policy, PolicyInput, ReplayPolicy, WaypointPolicy};
pub use run::{run_policy_loop, ActionSink, ExecutionTrace, FeedbackSource, StateSource, TraceRecord, VecSink};
pub use smooth::Smoother;

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("no prediction covers tick {0}")]
    NoPrediction(u64),
    #[error("policy query took {elapsed:?}, deadline {deadline:?}")]
    PolicyTimeout { elapsed: Duration, deadline: Duration },
    #[error("sink rejected the action at tick {tick}: {reason}")]
    SinkRejected { tick: u64, reason: String },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("policy returned a chunk of {found} actions of dimension {dim}, expected {expected_len} x {expected_dim}")]
    ChunkShape {
        found: usize,
        dim: usize,
        expected_len: usize,
        expected_dim: usize,
    },
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Replan timing. At defaults the policy is queried once per second and a
/// quarter of each chunk is executed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionSchedule {
    pub control_rate: f64,
    pub execute_per_chunk: usize,
    pub horizon: usize,
}

impl Default for ExecutionSchedule {
    fn default() -> Self {
        Self {
            control_rate: 25.0,
            execute_per_chunk: 25,
            horizon: 100,
        }
    }
}

impl ExecutionSchedule {
    pub fn validate(&self) -> Result<(), ExecutorError> {
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return Err(ExecutorError::InvalidSchedule("control_rate must be positive".into()));
        }
        if self.execute_per_chunk < 1 || self.execute_per_chunk > self.horizon {
            return Err(ExecutorError::InvalidSchedule(format!(
                "execute_per_chunk {} outside 1..={}",
                self.execute_per_chunk, self.horizon
            )));
        }
        Ok(())
    }

    /// Seconds between policy queries.
    pub fn replan_interval(&self) -> f64 {
        self.execute_per_chunk as f64 / self.control_rate
    }

    /// Control ticks in `seconds`, rounded to the nearest tick.
    pub fn ticks_for(&self, seconds: f64) -> u64 {
        (seconds * self.control_rate).round() as u64
    }
}

/// Everything the control loop needs besides the policy and its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    #[serde(flatten)]
    pub schedule: ExecutionSchedule,
    /// Ensembling weight decay per tick of prediction age.
    pub decay: f64,
    pub smoothing_window: usize,
    /// Per-query wall-clock budget.
    #[serde(with = "opt_secs")]
    pub query_deadline: Option<Duration>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            schedule: ExecutionSchedule::default(),
            decay: DEFAULT_DECAY,
            smoothing_window: 3,
            query_deadline: None,
        }
    }
}

impl ExecutorConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ExecutorError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| ExecutorError::InvalidSchedule(e.to_string()))?;
        cfg.schedule.validate()?;
        if cfg.smoothing_window == 0 {
            return Err(ExecutorError::InvalidSchedule(
                "smoothing_window must be at least 1".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("executor config serializes")
    }
}

mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_f64(d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let secs = Option::<f64>::deserialize(d)?;
        secs.map(|s| Duration::try_from_secs_f64(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exec.toml");
        let mut cfg = ExecutorConfig {
            decay: 0.05,
            ..Default::default()
        };
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert_eq!(ExecutorConfig::load(&path).unwrap(), cfg);
        cfg.query_deadline = Some(Duration::from_millis(250));
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert_eq!(ExecutorConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn bad_schedules_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exec.toml");
        let cfg = ExecutorConfig::default()
            .to_toml()
            .replace("execute_per_chunk = 25", "execute_per_chunk = 101");
        std::fs::write(&path, cfg).unwrap();
        assert!(matches!(
            ExecutorConfig::load(&path),
            Err(ExecutorError::InvalidSchedule(_))
        ));
    }
}
