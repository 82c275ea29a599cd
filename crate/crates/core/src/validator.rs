//! Offline replay validation of recorded episodes and dataset summaries.
//!
//! Replay here is kinematic: every recorded step is re-run through the
//! feasibility engine. Grasp outcomes are not modeled, so the success rate is
//! an upper bound on physical replay success.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DemoEpisode;
use crate::kinematics::ArmModel;
use crate::workspace::{check_static, check_step, FeasibilityVerdict, Scene, VerdictStatus};

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("episode {episode} was recorded in scene {recorded}, not {given}")]
    SceneMismatch {
        episode: String,
        recorded: String,
        given: String,
    },
    #[error("no reports to summarize")]
    NoReports,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Validate even when the episode names a different scene.
    pub allow_scene_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episode_id: String,
    pub scene_ref: String,
    pub success: bool,
    pub failure_index: Option<usize>,
    pub failure_reason: Option<VerdictStatus>,
    pub duration_s: f64,
    pub sample_count: usize,
    pub verdict_per_sample: Vec<FeasibilityVerdict>,
}

impl ReplayReport {
    pub fn first_failure(&self) -> Option<&FeasibilityVerdict> {
        self.failure_index.map(|i| &self.verdict_per_sample[i])
    }
}

/// Re-checks every recorded sample: the first statically, the rest as steps
/// at their recorded spacing. The model is placed at the episode's base pose.
pub fn replay_validate(
    episode: &DemoEpisode,
    scene: &Scene,
    model: &ArmModel,
    options: ValidateOptions,
) -> Result<ReplayReport, ValidatorError> {
    if episode.scene_ref != scene.id && !options.allow_scene_mismatch {
        return Err(ValidatorError::SceneMismatch {
            episode: episode.episode_id.clone(),
            recorded: episode.scene_ref.clone(),
            given: scene.id.clone(),
        });
    }
    let model = model.clone().with_base_pose(episode.base_pose);
    let verdicts: Vec<FeasibilityVerdict> = episode
        .robot
        .iter()
        .enumerate()
        .map(|(i, r)| match i {
            0 => check_static(&model, &r.q, scene),
            _ => {
                let prev = &episode.robot[i - 1];
                check_step(&model, &prev.q, &r.q, r.timestamp - prev.timestamp, scene)
            }
        })
        .collect();
    let failure_index = verdicts.iter().position(|v| !v.is_feasible());
    Ok(ReplayReport {
        episode_id: episode.episode_id.clone(),
        scene_ref: episode.scene_ref.clone(),
        success: failure_index.is_none(),
        failure_index,
        failure_reason: failure_index.map(|i| verdicts[i].status),
        duration_s: episode.duration(),
        sample_count: episode.len(),
        verdict_per_sample: verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub episode_count: usize,
    pub success_count: usize,
    /// Kinematic replay success rate in percent.
    pub success_rate: f64,
    pub mean_duration_s: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Failed episodes per first-failure mode, in verdict order.
    pub failure_counts: Vec<(VerdictStatus, usize)>,
}

impl DatasetSummary {
    /// Success rate with no trailing zeros, e.g. `96%` or `97.5%`.
    pub fn success_rate_label(&self) -> String {
        format_percent(self.success_rate)
    }
}

fn format_percent(v: f64) -> String {
    let s = format!("{v:.1}");
    format!("{}%", s.strip_suffix(".0").unwrap_or(&s))
}

pub fn summarize(reports: &[ReplayReport]) -> Result<DatasetSummary, ValidatorError> {
    if reports.is_empty() {
        return Err(ValidatorError::NoReports);
    }
    let n = reports.len();
    let success_count = reports.iter().filter(|r| r.success).count();
    let durations = reports.iter().map(|r| r.duration_s);
    let failure_counts = VerdictStatus::ALL
        .into_iter()
        .filter(|s| !s.is_feasible())
        .map(|s| (s, reports.iter().filter(|r| r.failure_reason == Some(s)).count()))
        .collect();
    Ok(DatasetSummary {
        episode_count: n,
        success_count,
        success_rate: 100.0 * success_count as f64 / n as f64,
        mean_duration_s: durations.clone().sum::<f64>() / n as f64,
        min_duration_s: durations.clone().fold(f64::INFINITY, f64::min),
        max_duration_s: durations.fold(f64::NEG_INFINITY, f64::max),
        failure_counts,
    })
}

/// Human-readable table: one row per episode, then the summary.
pub fn render_table(reports: &[ReplayReport], summary: &DatasetSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:>8} {:>9}  {:<8} first failure",
        "episode", "samples", "time (s)", "result"
    );
    for r in reports {
        let failure = match (r.failure_index, r.failure_reason) {
            (Some(i), Some(reason)) => format!("{reason} at sample {i}"),
            _ => String::new(),
        };
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>9.1}  {:<8} {}",
            r.episode_id,
            r.sample_count,
            r.duration_s,
            if r.success { "ok" } else { "FAIL" },
            failure
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Demo #              {}", summary.episode_count);
    let _ = writeln!(s, "Replay SR (kinematic) {}", summary.success_rate_label());
    let _ = writeln!(
        s,
        "Avg time (s)        {:.1} (min {:.1}, max {:.1})",
        summary.mean_duration_s, summary.min_duration_s, summary.max_duration_s
    );
    for (status, count) in &summary.failure_counts {
        if *count > 0 {
            let _ = writeln!(s, "  {status:<16} {count}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(success: bool, duration: f64) -> ReplayReport {
        ReplayReport {
            episode_id: "e".into(),
            scene_ref: "s".into(),
            success,
            failure_index: (!success).then_some(0),
            failure_reason: (!success).then_some(VerdictStatus::SpeedLimit),
            duration_s: duration,
            sample_count: 1,
            verdict_per_sample: vec![],
        }
    }

    #[test]
    fn forty_eight_of_fifty() {
        let reports: Vec<_> = (0..50).map(|i| report(i >= 2, 10.4)).collect();
        let s = summarize(&reports).unwrap();
        assert_eq!(s.success_rate_label(), "96%");
        assert!(render_table(&reports, &s).contains("Replay SR (kinematic) 96%"));
        let total: usize = s.failure_counts.iter().map(|(_, c)| c).sum();
        assert_eq!(total + s.success_count, 50);
    }

    #[test]
    fn all_success_and_mean_duration() {
        let s = summarize(&[report(true, 10.0), report(true, 11.0)]).unwrap();
        assert_eq!(s.success_rate_label(), "100%");
        assert_eq!(s.mean_duration_s, 10.5);
        assert_eq!((s.min_duration_s, s.max_duration_s), (10.0, 11.0));
    }

    #[test]
    fn fractional_rates_keep_one_decimal() {
        assert_eq!(format_percent(97.5), "97.5%");
        assert_eq!(format_percent(200.0 / 3.0), "66.7%");
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(matches!(summarize(&[]), Err(ValidatorError::NoReports)));
    }
}
