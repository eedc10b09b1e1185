use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BenchConfig, HarnessError, MatcherKind};
use crate::localization::{
    estimate_all, DescriptorNNMatcher, GoalObject, MatcherBackend, OracleMatcher, PoseEstimate,
};
use crate::perception::{build_database, Database, SyntheticDescriptor};
use crate::planner::{plan_and_execute, ExecutionResult, HomeViewObserver};
use crate::seeding;
use crate::sim::{
    generate_instance, generate_model_library, render, Frame, ModelLibrary, RearrangementInstance, RotationRegime,
    SimConfig, GOAL_FRAME_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Database from the ring of views around the initial scene.
    MultiView,
    /// Database from the home view of the initial scene only.
    SingleView,
}

impl ViewMode {
    pub fn name(&self) -> &'static str {
        match self {
            ViewMode::MultiView => "multi_view",
            ViewMode::SingleView => "single_view",
        }
    }
}

/// Shared pieces of every per-scene run: the model library, descriptor
/// backend and configuration.
pub struct Workbench {
    pub config: BenchConfig,
    pub library: Arc<ModelLibrary>,
    pub backend: SyntheticDescriptor,
}

impl Workbench {
    pub fn new(config: BenchConfig) -> Result<Self, HarnessError> {
        config.sim.validate()?;
        let library = Arc::new(generate_model_library(&config.sim));
        let backend = config.perception.synthetic_backend(library.len());
        Ok(Self {
            config,
            library,
            backend,
        })
    }

    pub fn sim_config(&self, seed: u64, regime: RotationRegime) -> SimConfig {
        SimConfig {
            seed,
            rotation: regime,
            ..self.config.sim.clone()
        }
    }

    pub fn instance(&self, seed: u64, regime: RotationRegime) -> Result<RearrangementInstance, HarnessError> {
        Ok(generate_instance(&self.sim_config(seed, regime), &self.library)?)
    }

    /// Matcher for one scene; stochastic matchers get a per-scene stream.
    pub fn matcher(&self, scene_seed: u64) -> Box<dyn MatcherBackend> {
        match self.config.matcher {
            MatcherKind::Oracle => {
                let mut cfg = self.config.oracle;
                cfg.seed = seeding::mix(cfg.seed, &[scene_seed]);
                Box::new(OracleMatcher::new(cfg))
            }
            MatcherKind::DescriptorNn => {
                let mut m = DescriptorNNMatcher::new(Arc::clone(&self.library));
                m.ratio = self.config.nn_ratio;
                Box::new(m)
            }
        }
    }

    pub fn database_frames(&self, inst: &RearrangementInstance, view: ViewMode) -> Result<Vec<Frame>, HarnessError> {
        let intr = inst.config.intrinsics()?;
        let viewpoints = match view {
            ViewMode::MultiView => inst.ring_viewpoints.clone(),
            ViewMode::SingleView => vec![inst.home_viewpoint],
        };
        let frames: Vec<Frame> = viewpoints
            .iter()
            .enumerate()
            .filter_map(|(i, v)| render(&inst.initial, v, &intr, &self.library, i as u32).ok())
            .collect();
        Ok(frames)
    }

    pub fn database(&self, inst: &RearrangementInstance, view: ViewMode) -> Result<Database, HarnessError> {
        let frames = self.database_frames(inst, view)?;
        Ok(build_database(&frames, &self.config.perception.segmentation, &self.backend, &self.config.perception)?)
    }

    pub fn goal_frame(&self, inst: &RearrangementInstance) -> Result<Frame, HarnessError> {
        let intr = inst.config.intrinsics()?;
        Ok(render(&inst.goal, &inst.home_viewpoint, &intr, &self.library, GOAL_FRAME_ID)?)
    }

    pub fn localize(&self, inst: &RearrangementInstance, db: &Database) -> Result<Vec<GoalObject>, HarnessError> {
        let goal = self.goal_frame(inst)?;
        let matcher = self.matcher(inst.config.seed);
        Ok(estimate_all(
            &goal,
            db,
            &self.config.perception.segmentation,
            &self.backend,
            matcher.as_ref(),
            &self.config.perception,
            &self.config.localization,
        )?)
    }

    /// Database instance of each scene object: every instance is attributed
    /// to the initial placement nearest its centroid, the closest instance
    /// winning when two land on the same object.
    pub fn object_instances(&self, inst: &RearrangementInstance, db: &Database) -> Vec<Option<usize>> {
        let mut best: Vec<Option<(usize, f64)>> = vec![None; inst.object_count()];
        for (u, c) in db.instance_centroids.iter().enumerate() {
            let nearest = inst
                .initial
                .placements
                .iter()
                .map(|p| (p.pose.tx - c.x).hypot(p.pose.ty - c.y))
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, d)) = nearest {
                if best[j].is_none_or(|(_, bd)| d < bd) {
                    best[j] = Some((u, d));
                }
            }
        }
        best.into_iter().map(|b| b.map(|(u, _)| u)).collect()
    }

    /// One goal offset per scene object. Objects no goal region was
    /// attributed to get a rejected identity estimate.
    pub fn object_estimates(instances: &[Option<usize>], objects: &[GoalObject]) -> Vec<PoseEstimate> {
        instances
            .iter()
            .map(|u| {
                objects
                    .iter()
                    .filter(|o| u.is_some() && o.result.instance == *u)
                    .map(|o| o.result.estimate)
                    .max_by(|a, b| {
                        (a.accepted, a.inlier_ratio)
                            .partial_cmp(&(b.accepted, b.inlier_ratio))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or_else(PoseEstimate::identity)
            })
            .collect()
    }

    pub fn rearrange(
        &self,
        inst: &RearrangementInstance,
        db: &Database,
        objects: &[GoalObject],
    ) -> Result<ExecutionResult, HarnessError> {
        let instances = self.object_instances(inst, db);
        let estimates = Self::object_estimates(&instances, objects);
        let matcher = self.matcher(seeding::mix(inst.config.seed, &[seeding::TAG_ACTUATION]));
        let observer = HomeViewObserver {
            library: &self.library,
            database: db,
            segmenter: &self.config.perception.segmentation,
            backend: &self.backend,
            matcher: matcher.as_ref(),
            perception: &self.config.perception,
            localization: &self.config.localization,
            home: inst.home_viewpoint,
            intrinsics: inst.config.intrinsics()?,
            instances,
        };
        Ok(plan_and_execute(inst, &estimates, &self.config.planner, Some(&observer))?)
    }
}
