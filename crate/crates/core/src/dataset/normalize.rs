use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{episode_actions, ActionSpace, DatasetError, DemoEpisode};

pub const STD_EPSILON: f64 = 1e-8;

/// Per-dimension z-score statistics shared by every embodiment in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub space: ActionSpace,
    pub horizon: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at `epsilon`.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl NormalizationStats {
    /// Pooled statistics over every action of every episode.
    pub fn fit(episodes: &[DemoEpisode], space: ActionSpace, horizon: usize) -> Result<Self, DatasetError> {
        let actions: Vec<Vec<f64>> = episodes.iter().flat_map(|e| episode_actions(e, space)).collect();
        Self::fit_actions(&actions, space, horizon)
    }

    pub fn fit_actions(actions: &[Vec<f64>], space: ActionSpace, horizon: usize) -> Result<Self, DatasetError> {
        if actions.is_empty() {
            return Err(DatasetError::NoActions);
        }
        let dim = space.dim();
        let n = actions.len() as f64;
        // Accumulate offsets from the first action so constant dimensions come out exact.
        let origin = &actions[0];
        let mut shift = vec![0.0; dim];
        for a in actions {
            for d in 0..dim {
                shift[d] += a[d] - origin[d];
            }
        }
        let mean: Vec<f64> = (0..dim).map(|d| origin[d] + shift[d] / n).collect();
        let mut var = vec![0.0; dim];
        for a in actions {
            for d in 0..dim {
                var[d] += (a[d] - mean[d]).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_EPSILON)).collect();
        Ok(Self {
            space,
            horizon,
            mean,
            std,
            epsilon: STD_EPSILON,
        })
    }

    pub fn apply(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(a, (m, s))| (a - m) / s)
            .collect()
    }

    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = StatsFile {
            format_version: super::EPISODE_FORMAT_VERSION,
            stats: self.clone(),
        };
        let text = toml::to_string_pretty(&file).map_err(|e| DatasetError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let file: StatsFile = toml::from_str(&text).map_err(|e| DatasetError::Format(e.to_string()))?;
        if file.format_version != super::EPISODE_FORMAT_VERSION {
            return Err(DatasetError::FormatVersionMismatch {
                found: file.format_version,
                expected: super::EPISODE_FORMAT_VERSION,
            });
        }
        let s = file.stats;
        if s.mean.len() != s.space.dim() || s.std.len() != s.space.dim() {
            return Err(DatasetError::Format(
                "statistics do not match the action dimension".into(),
            ));
        }
        Ok(s)
    }
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    format_version: u32,
    #[serde(flatten)]
    stats: NormalizationStats,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_actions_normalize_to_zero() {
        let a = vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1, 1.0];
        let s = NormalizationStats::fit_actions(&vec![a.clone(); 7], ActionSpace::Joint, 100).unwrap();
        assert_eq!(s.mean, a);
        assert!(s.std.iter().all(|&v| v == STD_EPSILON));
        assert!(s.apply(&a).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn invert_is_inverse() {
        let acts: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                (0..7)
                    .map(|d| ((i * 7 + d) as f64 * 0.37).sin() * (d + 1) as f64)
                    .collect()
            })
            .collect();
        let s = NormalizationStats::fit_actions(&acts, ActionSpace::Joint, 100).unwrap();
        for a in &acts {
            for (x, y) in s.invert(&s.apply(a)).iter().zip(a) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            NormalizationStats::fit_actions(&[], ActionSpace::Joint, 100),
            Err(DatasetError::NoActions)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let acts = vec![
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.0],
            vec![0.7, 0.1, -0.3, 0.2, 0.5, 0.9, 1.0],
        ];
        let s = NormalizationStats::fit_actions(&acts, ActionSpace::Joint, 100).unwrap();
        let p = dir.path().join("normalization.toml");
        s.save(&p).unwrap();
        assert_eq!(NormalizationStats::load(&p).unwrap(), s);
    }
}
