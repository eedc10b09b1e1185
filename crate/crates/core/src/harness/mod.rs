//! Benchmark driver: seeded scene suites, pose-accuracy and task-completion
//! runs, metrics and result files.

mod bench;
mod metrics;
mod pipeline;
mod report;

pub use bench::{run_completion_bench, run_pose_bench, scene_seeds};
pub use metrics::{
    completion_summaries, compute_metrics, median, pose_summaries, CompletionRecord, CompletionSummary, MetricsReport,
    PoseRecord, PoseSummary,
};
pub use pipeline::{ViewMode, Workbench};
pub use report::{
    load_config, read_dataset, read_json, render_table, write_csv, write_dataset, write_json, write_report, DatasetManifest,
    DATASET_FORMAT,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::{LocalizationConfig, LocalizationError, OracleMatcherConfig};
use crate::perception::{PerceptionConfig, PerceptionError};
use crate::planner::{PlannerConfig, PlannerError};
use crate::sim::{RotationRegime, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Oracle,
    DescriptorNn,
}

/// Which completion rule is reported as the headline rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Each object reaches its goal with a single goal move; buffer moves
    /// are not counted.
    OneStep,
    /// Any number of moves.
    MultiStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Seed of the first scene; scene `i` uses `seed + i`.
    pub seed: u64,
    pub scenes: usize,
    /// Every regime runs on the same scene seeds.
    pub regimes: Vec<RotationRegime>,
    pub setting: Setting,
    /// Also run the pose bench against a database built from the home view
    /// of the initial scene only.
    pub single_view_ablation: bool,
    pub matcher: MatcherKind,
    pub oracle: OracleMatcherConfig,
    /// Ratio test threshold of the descriptor matcher.
    pub nn_ratio: f64,
    pub sim: SimConfig,
    pub perception: PerceptionConfig,
    pub localization: LocalizationConfig,
    pub planner: PlannerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 50,
            regimes: vec![RotationRegime::Minor, RotationRegime::Full],
            setting: Setting::MultiStep,
            single_view_ablation: true,
            matcher: MatcherKind::Oracle,
            oracle: OracleMatcherConfig::default(),
            nn_ratio: 0.8,
            sim: SimConfig::default(),
            perception: PerceptionConfig::default(),
            localization: LocalizationConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}
