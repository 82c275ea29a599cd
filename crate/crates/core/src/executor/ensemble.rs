use std::collections::VecDeque;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::ExecutorError;
use crate::dataset::{ActionChunk, ActionSpace};

pub const DEFAULT_DECAY: f64 = 0.01;

/// A chunk predicted at `query_tick`; entry `i` targets tick `query_tick + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub query_tick: u64,
    pub chunk: ActionChunk,
}

impl Prediction {
    pub fn covers(&self, tick: u64) -> bool {
        tick >= self.query_tick && ((tick - self.query_tick) as usize) < self.chunk.actions.len()
    }

    fn entry(&self, tick: u64) -> (&[f64], bool) {
        let i = (tick - self.query_tick) as usize;
        (&self.chunk.actions[i], self.chunk.mask[i])
    }
}

/// Live predictions, newest last.
#[derive(Debug, Clone)]
pub struct EnsembleBuffer {
    pub space: ActionSpace,
    pub horizon: usize,
    pub decay: f64,
    predictions: VecDeque<Prediction>,
}

impl EnsembleBuffer {
    pub fn new(space: ActionSpace, horizon: usize, decay: f64) -> Self {
        Self {
            space,
            horizon,
            decay,
            predictions: VecDeque::new(),
        }
    }

    pub fn insert(&mut self, prediction: Prediction) {
        self.predictions.push_back(prediction);
    }

    pub fn predictions(&self) -> impl Iterator<Item = &Prediction> {
        self.predictions.iter()
    }

    /// Drops predictions made `horizon` or more ticks before `tick`.
    pub fn evict(&mut self, tick: u64) {
        let h = self.horizon as u64;
        self.predictions.retain(|p| p.query_tick + h > tick);
    }

    /// Query ticks of the predictions that contribute to `tick`.
    ///
    /// Padded entries only count when no prediction has a real action there.
    pub fn contributors(&self, tick: u64) -> Vec<u64> {
        let covering: Vec<&Prediction> = self.predictions.iter().filter(|p| p.covers(tick)).collect();
        let any_valid = covering.iter().any(|p| p.entry(tick).1);
        covering
            .into_iter()
            .filter(|p| !any_valid || p.entry(tick).1)
            .map(|p| p.query_tick)
            .collect()
    }

    /// Exponentially weighted average of the contributing predictions, weight
    /// `exp(-decay * age)` with age in ticks since the prediction was made.
    pub fn ensemble(&self, tick: u64) -> Result<Vec<f64>, ExecutorError> {
        let ids = self.contributors(tick);
        let newest_id = *ids.iter().max().ok_or(ExecutorError::NoPrediction(tick))?;
        let parts: Vec<(f64, &[f64])> = self
            .predictions
            .iter()
            .filter(|p| ids.contains(&p.query_tick))
            .map(|p| ((-self.decay * (tick - p.query_tick) as f64).exp(), p.entry(tick).0))
            .collect();
        let newest = self
            .predictions
            .iter()
            .rev()
            .find(|p| p.query_tick == newest_id)
            .map(|p| p.entry(tick).0)
            .expect("newest contributor present");
        Ok(combine(self.space, &parts, newest))
    }
}

/// Weighted mean written as the newest value plus weighted offsets from it,
/// so identical inputs reproduce exactly.
fn combine(space: ActionSpace, parts: &[(f64, &[f64])], newest: &[f64]) -> Vec<f64> {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    let rot = space.orientation_range();
    let g = space.gripper_index();
    let mut out = newest.to_vec();
    for d in 0..newest.len() {
        if d == g || rot.as_ref().is_some_and(|r| r.contains(&d)) {
            continue;
        }
        let offset: f64 = parts.iter().map(|(w, a)| w * (a[d] - newest[d])).sum::<f64>() / total;
        let (lo, hi) = parts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, a)| {
                (lo.min(a[d]), hi.max(a[d]))
            });
        out[d] = (newest[d] + offset).clamp(lo, hi);
    }
    if let Some(r) = rot {
        let q = |a: &[f64]| {
            UnitQuaternion::new_normalize(Quaternion::new(
                a[r.start],
                a[r.start + 1],
                a[r.start + 2],
                a[r.start + 3],
            ))
        };
        let qn = q(newest);
        let mut tangent = Vector3::zeros();
        for (w, a) in parts {
            // nalgebra's product of a quaternion with its own inverse is not exactly identity.
            if a[r.clone()] == newest[r.clone()] {
                continue;
            }
            let mut qi = q(a);
            if qi.coords.dot(&qn.coords) < 0.0 {
                qi = UnitQuaternion::new_unchecked(-qi.into_inner());
            }
            tangent += (qn.inverse() * qi).scaled_axis() * *w;
        }
        tangent /= total;
        if tangent != Vector3::zeros() {
            let avg = qn * UnitQuaternion::from_scaled_axis(tangent);
            out[r.start] = avg.w;
            out[r.start + 1] = avg.i;
            out[r.start + 2] = avg.j;
            out[r.start + 3] = avg.k;
        }
    }
    let vote: f64 = parts.iter().map(|(w, a)| w * a[g]).sum::<f64>() / total;
    out[g] = if vote > 0.5 {
        1.0
    } else if vote < 0.5 {
        0.0
    } else {
        newest[g]
    };
    out
}
