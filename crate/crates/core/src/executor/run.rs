use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EnsembleBuffer, ExecutorConfig, ExecutorError, Policy, PolicyInput, Prediction, Smoother};

/// Supplies the robot state handed to the policy at each query.
pub trait StateSource {
    fn observe(&mut self, tick: u64, last_emitted: Option<&[f64]>) -> Option<Vec<f64>>;
}

/// Reports the most recently emitted action as the robot state.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeedbackSource;

impl StateSource for FeedbackSource {
    fn observe(&mut self, _tick: u64, last_emitted: Option<&[f64]>) -> Option<Vec<f64>> {
        last_emitted.map(<[f64]>::to_vec)
    }
}

/// Downstream consumer of emitted actions; an error aborts the loop.
pub trait ActionSink {
    fn accept(&mut self, tick: u64, time: f64, action: &[f64]) -> Result<(), String>;
}

#[derive(Debug, Clone, Default)]
pub struct VecSink {
    pub actions: Vec<Vec<f64>>,
}

impl ActionSink for VecSink {
    fn accept(&mut self, _tick: u64, _time: f64, action: &[f64]) -> Result<(), String> {
        self.actions.push(action.to_vec());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Query {
        tick: u64,
        time: f64,
        prediction: Vec<Vec<f64>>,
        mask: Vec<bool>,
    },
    Emit {
        tick: u64,
        time: f64,
        /// Ensembled action before smoothing.
        ensembled: Vec<f64>,
        action: Vec<f64>,
        /// Query ticks of the predictions that were averaged.
        contributors: Vec<u64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn query_times(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Query { time, .. } => Some(*time),
                _ => None,
            })
            .collect()
    }

    pub fn query_count(&self) -> usize {
        self.query_times().len()
    }

    pub fn emitted(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Emit { action, .. } => Some(action.clone()),
                _ => None,
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()
    }
}

/// Runs `ticks` control steps on the virtual clock `tick / control_rate`,
/// querying the policy every `execute_per_chunk` ticks and emitting one
/// ensembled, smoothed action per tick.
pub fn run_policy_loop(
    policy: &mut dyn Policy,
    config: &ExecutorConfig,
    ticks: u64,
    source: &mut dyn StateSource,
    sink: &mut dyn ActionSink,
) -> Result<ExecutionTrace, ExecutorError> {
    let schedule = config.schedule;
    schedule.validate()?;
    let space = policy.space();
    let mut buffer = EnsembleBuffer::new(space, schedule.horizon, config.decay);
    let mut smoother = Smoother::new(space, config.smoothing_window.max(1));
    let mut trace = ExecutionTrace::default();
    let mut last: Option<Vec<f64>> = None;

    for tick in 0..ticks {
        let time = tick as f64 / schedule.control_rate;
        if tick % schedule.execute_per_chunk as u64 == 0 {
            let input = PolicyInput {
                tick,
                time,
                state: source.observe(tick, last.as_deref()),
            };
            let started = Instant::now();
            let chunk = policy.predict(&input, schedule.horizon)?;
            let elapsed = started.elapsed();
            if let Some(deadline) = config.query_deadline {
                if elapsed > deadline {
                    return Err(ExecutorError::PolicyTimeout { elapsed, deadline });
                }
            }
            let bad_dim = chunk.actions.iter().find(|a| a.len() != space.dim()).map(Vec::len);
            if chunk.actions.len() != schedule.horizon || chunk.mask.len() != schedule.horizon || bad_dim.is_some() {
                return Err(ExecutorError::ChunkShape {
                    found: chunk.actions.len(),
                    dim: bad_dim.unwrap_or(space.dim()),
                    expected_len: schedule.horizon,
                    expected_dim: space.dim(),
                });
            }
            trace.records.push(TraceRecord::Query {
                tick,
                time,
                prediction: chunk.actions.clone(),
                mask: chunk.mask.clone(),
            });
            buffer.insert(Prediction {
                query_tick: tick,
                chunk,
            });
        }
        buffer.evict(tick);
        let contributors = buffer.contributors(tick);
        let ensembled = buffer.ensemble(tick)?;
        let action = smoother.push(&ensembled);
        sink.accept(tick, time, &action)
            .map_err(|reason| ExecutorError::SinkRejected { tick, reason })?;
        trace.records.push(TraceRecord::Emit {
            tick,
            time,
            ensembled,
            action: action.clone(),
            contributors,
        });
        last = Some(action);
    }
    Ok(trace)
}
