use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BenchConfig, Setting, ViewMode};
use crate::sim::RotationRegime;

/// Median with the midpoint rule for even counts; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// One object of one scene in the pose bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub regime: RotationRegime,
    pub view: ViewMode,
    pub scene_seed: u64,
    /// Ground-truth object index.
    pub object: u32,
    /// Goal region attributed to the object; empty if it was not segmented.
    pub goal_region: Option<usize>,
    pub instance: Option<usize>,
    pub accepted: bool,
    /// Whether the retrieved instance holds this object's regions.
    pub retrieval_correct: Option<bool>,
    /// Every database instance of the scene holds a single object.
    pub database_pure: bool,
    pub rotation_error_deg: f64,
    pub translation_error_cm: f64,
    pub inliers: usize,
    pub correspondences: usize,
    pub candidates_visited: usize,
    pub matcher_invocations: usize,
}

/// One scene of the completion bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub regime: RotationRegime,
    pub scene_seed: u64,
    pub objects: usize,
    pub accepted_estimates: usize,
    /// Every final pose within the success thresholds.
    pub multi_step_success: bool,
    /// As above, with at most one goal move per object.
    pub one_step_success: bool,
    pub planner_completed: bool,
    pub manipulations: usize,
    pub goal_moves: usize,
    pub buffer_moves: usize,
    pub outer_iterations: usize,
    pub max_rotation_error_deg: f64,
    pub max_translation_error_cm: f64,
    pub matcher_invocations: usize,
    /// Manipulations per object, `;`-separated.
    pub per_object_manipulations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSummary {
    pub regime: RotationRegime,
    pub view: ViewMode,
    pub scenes: usize,
    pub objects: usize,
    pub detected: usize,
    pub accepted: usize,
    pub median_rotation_deg: Option<f64>,
    pub median_translation_cm: Option<f64>,
    /// Fraction of detected objects whose retrieved instance is right.
    pub retrieval_accuracy: Option<f64>,
    /// Fraction of scenes whose database instances are pure.
    pub purity_rate: Option<f64>,
    pub matcher_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSummary {
    pub regime: RotationRegime,
    pub scenes: usize,
    /// Percent of scenes.
    pub multi_step_rate: Option<f64>,
    pub one_step_rate: Option<f64>,
    /// The rate of the configured setting.
    pub completion_rate: Option<f64>,
    /// Objects by number of manipulations.
    pub manipulation_histogram: BTreeMap<usize, usize>,
    pub manipulations: usize,
    pub buffer_moves: usize,
    pub matcher_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: BenchConfig,
    pub scenes_requested: usize,
    /// Scene runs that failed and were left out, as `regime:seed`.
    pub skipped: Vec<String>,
    pub pose: Vec<PoseSummary>,
    pub completion: Vec<CompletionSummary>,
    #[serde(skip)]
    pub pose_records: Vec<PoseRecord>,
    #[serde(skip)]
    pub completion_records: Vec<CompletionRecord>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl MetricsReport {
    pub fn pose_summary(&self, regime: RotationRegime, view: ViewMode) -> Option<&PoseSummary> {
        self.pose.iter().find(|s| s.regime == regime && s.view == view)
    }

    pub fn completion_summary(&self, regime: RotationRegime) -> Option<&CompletionSummary> {
        self.completion.iter().find(|s| s.regime == regime)
    }
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn pose_summaries(records: &[PoseRecord]) -> Vec<PoseSummary> {
    let mut groups: BTreeMap<(RotationRegime, ViewMode), Vec<&PoseRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.regime, r.view)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((regime, view), rs)| {
            let mut scenes: BTreeMap<u64, bool> = BTreeMap::new();
            for r in &rs {
                scenes.insert(r.scene_seed, r.database_pure);
            }
            let retrieval: Vec<bool> = rs.iter().filter_map(|r| r.retrieval_correct).collect();
            let rot: Vec<f64> = rs.iter().map(|r| r.rotation_error_deg).collect();
            let trans: Vec<f64> = rs.iter().map(|r| r.translation_error_cm).collect();
            PoseSummary {
                regime,
                view,
                scenes: scenes.len(),
                objects: rs.len(),
                detected: rs.iter().filter(|r| r.goal_region.is_some()).count(),
                accepted: rs.iter().filter(|r| r.accepted).count(),
                median_rotation_deg: median(&rot),
                median_translation_cm: median(&trans),
                retrieval_accuracy: fraction(retrieval.iter().filter(|&&c| c).count(), retrieval.len()),
                purity_rate: fraction(scenes.values().filter(|&&p| p).count(), scenes.len()),
                matcher_invocations: rs.iter().map(|r| r.matcher_invocations).sum(),
            }
        })
        .collect()
}

pub fn completion_summaries(records: &[CompletionRecord], setting: Setting) -> Vec<CompletionSummary> {
    let mut groups: BTreeMap<RotationRegime, Vec<&CompletionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.regime).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(regime, rs)| {
            let n = rs.len();
            let rate = |hits: usize| fraction(hits, n).map(|f| 100.0 * f);
            let multi = rate(rs.iter().filter(|r| r.multi_step_success).count());
            let one = rate(rs.iter().filter(|r| r.one_step_success).count());
            let mut histogram = BTreeMap::new();
            for r in &rs {
                for c in r.per_object_manipulations.split(';').filter_map(|c| c.parse::<usize>().ok()) {
                    *histogram.entry(c).or_insert(0) += 1;
                }
            }
            CompletionSummary {
                regime,
                scenes: n,
                multi_step_rate: multi,
                one_step_rate: one,
                completion_rate: match setting {
                    Setting::OneStep => one,
                    Setting::MultiStep => multi,
                },
                manipulation_histogram: histogram,
                manipulations: rs.iter().map(|r| r.manipulations).sum(),
                buffer_moves: rs.iter().map(|r| r.buffer_moves).sum(),
                matcher_invocations: rs.iter().map(|r| r.matcher_invocations).sum(),
            }
        })
        .collect()
}

/// Summaries of raw records.
pub fn compute_metrics(
    config: &BenchConfig,
    pose_records: Vec<PoseRecord>,
    completion_records: Vec<CompletionRecord>,
    skipped: Vec<String>,
    wall_clock: Duration,
) -> MetricsReport {
    MetricsReport {
        config: config.clone(),
        scenes_requested: config.scenes,
        skipped,
        pose: pose_summaries(&pose_records),
        completion: completion_summaries(&completion_records, config.setting),
        pose_records,
        completion_records,
        wall_clock,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[4.5]), Some(4.5));
    }

    proptest! {
        #[test]
        fn median_splits_the_sample(v in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let m = median(&v).unwrap();
            let below = v.iter().filter(|&&x| x < m).count();
            let above = v.iter().filter(|&&x| x > m).count();
            prop_assert!(below <= v.len() / 2 && above <= v.len() / 2);
        }
    }

    #[test]
    fn empty_records_give_empty_summaries() {
        assert!(pose_summaries(&[]).is_empty());
        assert!(completion_summaries(&[], Setting::MultiStep).is_empty());
    }
}
