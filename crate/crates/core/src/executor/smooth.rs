use std::collections::VecDeque;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::dataset::ActionSpace;

/// Causal moving average over the last `window` actions. The gripper channel
/// passes through; averaged quaternions are renormalized.
#[derive(Debug, Clone)]
pub struct Smoother {
    space: ActionSpace,
    window: usize,
    history: VecDeque<Vec<f64>>,
}

impl Smoother {
    pub fn new(space: ActionSpace, window: usize) -> Self {
        assert!(window >= 1, "smoothing window must be at least 1");
        Self {
            space,
            window,
            history: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, action: &[f64]) -> Vec<f64> {
        if self.window == 1 {
            return action.to_vec();
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        let mut a = action.to_vec();
        if let Some(r) = self.space.orientation_range() {
            // Keep successive quaternions in one hemisphere so they average sensibly.
            if let Some(prev) = self.history.back() {
                let dot: f64 = r.clone().map(|d| prev[d] * a[d]).sum();
                if dot < 0.0 {
                    r.clone().for_each(|d| a[d] = -a[d]);
                }
            }
        }
        self.history.push_back(a);
        let n = self.history.len() as f64;
        // Mean as offsets from the oldest entry, so a constant input passes through exactly.
        let first = &self.history[0];
        let offsets: Vec<f64> = (0..action.len())
            .map(|d| self.history.iter().map(|h| h[d] - first[d]).sum::<f64>() / n)
            .collect();
        let mut out: Vec<f64> = first.iter().zip(&offsets).map(|(a, o)| a + o).collect();
        out[self.space.gripper_index()] = action[self.space.gripper_index()];
        if let Some(r) = self.space.orientation_range() {
            if offsets[r.clone()].iter().any(|o| *o != 0.0) {
                let q = UnitQuaternion::new_normalize(Quaternion::new(
                    out[r.start],
                    out[r.start + 1],
                    out[r.start + 2],
                    out[r.start + 3],
                ));
                out[r.start] = q.w;
                out[r.start + 1] = q.i;
                out[r.start + 2] = q.j;
                out[r.start + 3] = q.k;
            }
        }
        out
    }
}
