//! Iterative rearrangement: every remaining object is corrected from its
//! current pose, collision-checked and moved; objects that keep colliding
//! are parked at a random free spot and retried.

mod observe;

pub use observe::{HomeViewObserver, Reobserver};

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{planar_difference, PlanarTransform, Pose3};
use crate::localization::PoseEstimate;
use crate::seeding;
use crate::sim::{apply_move, RearrangementInstance, SceneState, SimError};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("object {0} is not part of the scene")]
    UnknownObject(usize),
    #[error("no collision-free buffer pose for object {object} after {attempts} attempts")]
    NoBufferSpace { object: usize, attempts: usize },
    #[error("object {0} could not be re-localized from the home view")]
    ReobservationFailed(usize),
    #[error("{estimates} estimates for {objects} objects")]
    EstimateCount { estimates: usize, objects: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Failed attempts after which an object is moved to a buffer pose.
    pub fail_threshold: usize,
    /// Outer-loop limit; `None` means twice the object count.
    pub outer_threshold: Option<usize>,
    /// Clearance added to the mover's footprint radius, meters.
    pub margin: f64,
    pub success_rotation_deg: f64,
    pub success_translation_cm: f64,
    pub buffer_attempts: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            fail_threshold: 3,
            outer_threshold: None,
            margin: 0.01,
            success_rotation_deg: 5.0,
            success_translation_cm: 2.0,
            buffer_attempts: 1000,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn outer_limit(&self, objects: usize) -> usize {
        self.outer_threshold.unwrap_or(2 * objects)
    }
}

/// Whether `object` placed at `target` with its footprint grown by `margin`
/// would touch another object or leave the table.
pub fn check_collision(
    scene: &SceneState,
    object: usize,
    target: &PlanarTransform,
    margin: f64,
) -> Result<bool, PlannerError> {
    scene.collides(object, target, margin).map_err(|e| match e {
        SimError::UnknownObject(i) => PlannerError::UnknownObject(i),
        other => PlannerError::Sim(other),
    })
}

/// Offset still to apply to an object, given its goal offset and the
/// displacement it has accumulated since the database was recorded.
pub fn correct_pose(goal_offset: &PlanarTransform, tracked: &PlanarTransform) -> Pose3 {
    goal_offset.compose(&tracked.inverse()).lift()
}

/// Rejection-samples a uniform pose on the table that passes
/// [`check_collision`].
pub fn find_buffer_pose<R: Rng>(
    scene: &SceneState,
    object: usize,
    margin: f64,
    attempts: usize,
    rng: &mut R,
) -> Result<PlanarTransform, PlannerError> {
    let radius = scene.placements.get(object).ok_or(PlannerError::UnknownObject(object))?.radius;
    let t = &scene.table;
    // centres closer to the edge than the radius always fail the check
    let (lx, hx) = (t.min_x + radius, t.max_x - radius);
    let (ly, hy) = (t.min_y + radius, t.max_y - radius);
    if lx <= hx && ly <= hy {
        for _ in 0..attempts {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let x = if hx > lx { rng.random_range(lx..=hx) } else { lx };
            let y = if hy > ly { rng.random_range(ly..=hy) } else { ly };
            let pose = PlanarTransform::new(yaw, x, y);
            if !check_collision(scene, object, &pose, margin)? {
                return Ok(pose);
            }
        }
    }
    Err(PlannerError::NoBufferSpace { object, attempts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanState {
    /// Objects still to place, in processing order.
    pub remaining: Vec<usize>,
    pub failure_counts: Vec<usize>,
    pub outer_iterations: usize,
    /// Displacement of each object since the database scene.
    pub tracked_poses: Vec<PlanarTransform>,
}

impl PlanState {
    pub fn new(objects: usize) -> Self {
        Self {
            remaining: (0..objects).collect(),
            failure_counts: vec![0; objects],
            outer_iterations: 0,
            tracked_poses: vec![PlanarTransform::identity(); objects],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    GoalMove,
    BufferMove,
    /// Goal target failed the collision check.
    Blocked,
    /// Already within the success thresholds; removed without a move.
    InPlace,
    /// Estimate not accepted, nothing to act on.
    Unlocalized,
    ReobservationFailed,
    NoBufferSpace,
}

impl StepKind {
    pub fn is_manipulation(&self) -> bool {
        matches!(self, StepKind::GoalMove | StepKind::BufferMove)
    }
}

/// One entry of the move log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub outer_iteration: usize,
    pub object: usize,
    pub kind: StepKind,
    /// Commanded placement, when one was computed.
    pub target: Option<PlanarTransform>,
    /// Placement reached after actuation noise; equals `target` when noiseless.
    pub placed: Option<PlanarTransform>,
    /// Outcome of the collision check on `target`.
    pub collision: Option<bool>,
    /// Failure count of the object after this step.
    pub failure_count: usize,
    /// Running manipulation number for moves.
    pub manipulation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub log: Vec<StepRecord>,
    /// Every object was placed or confirmed in place.
    pub completed: bool,
    pub goal_moves: Vec<usize>,
    pub buffer_moves: Vec<usize>,
    pub final_scene: SceneState,
    pub state: PlanState,
}

impl ExecutionResult {
    pub fn manipulation_counts(&self) -> Vec<usize> {
        self.goal_moves.iter().zip(&self.buffer_moves).map(|(g, b)| g + b).collect()
    }

    pub fn manipulations(&self) -> usize {
        self.goal_moves.iter().sum::<usize>() + self.buffer_moves.iter().sum::<usize>()
    }
}

/// Re-applies the executed moves of a log to `scene`.
pub fn replay(scene: &SceneState, log: &[StepRecord]) -> Result<SceneState, SimError> {
    let mut scene = scene.clone();
    let mut rng = seeding::rng(0, &[]);
    for rec in log.iter().filter(|r| r.kind.is_manipulation()) {
        let placed = rec.placed.expect("moves record their placement");
        scene = apply_move(&scene, rec.object, &placed, 0.0, &mut rng)?;
    }
    Ok(scene)
}

struct Executor<'a> {
    instance: &'a RearrangementInstance,
    config: &'a PlannerConfig,
    observer: Option<&'a dyn Reobserver>,
    scene: SceneState,
    state: PlanState,
    log: Vec<StepRecord>,
    goal_moves: Vec<usize>,
    buffer_moves: Vec<usize>,
    /// Last commanded placement per object, used to find it again.
    expected: Vec<PlanarTransform>,
    moved: Vec<bool>,
}

impl Executor<'_> {
    fn record(&mut self, object: usize, kind: StepKind, target: Option<PlanarTransform>, placed: Option<PlanarTransform>, collision: Option<bool>) {
        let manipulation = kind.is_manipulation().then(|| self.goal_moves.iter().sum::<usize>() + self.buffer_moves.iter().sum::<usize>());
        self.log.push(StepRecord {
            step: self.log.len(),
            outer_iteration: self.state.outer_iterations,
            object,
            kind,
            target,
            placed,
            collision,
            failure_count: self.state.failure_counts[object],
            manipulation,
        });
    }

    fn execute(&mut self, object: usize, target: &PlanarTransform) -> Result<PlanarTransform, PlannerError> {
        let sigma = self.instance.config.actuation_noise;
        let mut rng = seeding::rng(self.config.seed, &[seeding::TAG_ACTUATION, self.instance.config.seed, self.log.len() as u64]);
        self.scene = apply_move(&self.scene, object, target, sigma, &mut rng)?;
        let after = self.scene.placements[object].pose;
        // dead reckoning: the commanded motion, not the noisy outcome
        let step = target.compose(&self.expected[object].inverse());
        self.state.tracked_poses[object] = step.compose(&self.state.tracked_poses[object]);
        self.expected[object] = *target;
        self.moved[object] = true;
        Ok(after)
    }

    fn fail(&mut self, object: usize) {
        self.state.failure_counts[object] += 1;
    }

    fn buffer(&mut self, object: usize) -> Result<(), PlannerError> {
        let mut rng = seeding::rng(self.config.seed, &[seeding::TAG_BUFFER, self.instance.config.seed, self.log.len() as u64]);
        match find_buffer_pose(&self.scene, object, self.config.margin, self.config.buffer_attempts, &mut rng) {
            Ok(pose) => {
                let placed = self.execute(object, &pose)?;
                self.buffer_moves[object] += 1;
                self.record(object, StepKind::BufferMove, Some(pose), Some(placed), Some(false));
            }
            Err(e @ PlannerError::NoBufferSpace { .. }) => {
                warn!("{e}");
                self.record(object, StepKind::NoBufferSpace, None, None, None);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// One visit of the inner loop; returns whether the object is done.
    fn visit(&mut self, object: usize, estimate: &PoseEstimate) -> Result<bool, PlannerError> {
        if !estimate.accepted {
            self.fail(object);
            self.record(object, StepKind::Unlocalized, None, None, None);
            return Ok(false);
        }
        if let (Some(observer), true) = (self.observer, self.instance.config.actuation_noise > 0.0 && self.moved[object]) {
            match observer.reobserve(&self.scene, object, &self.expected[object]) {
                Ok(tracked) => self.state.tracked_poses[object] = tracked,
                Err(PlannerError::ReobservationFailed(_)) => {
                    self.fail(object);
                    self.record(object, StepKind::ReobservationFailed, None, None, None);
                    return Ok(false);
                }
                Err(e) => return Err(e),
            }
        }
        let correction = PlanarTransform::from_pose(&correct_pose(&estimate.planar(), &self.state.tracked_poses[object]));
        let current = self.scene.placements[object].pose;
        let target = correction.compose(&current);
        if planar_difference(&target, &current).within(self.config.success_rotation_deg, self.config.success_translation_cm) {
            self.record(object, StepKind::InPlace, Some(target), None, None);
            return Ok(true);
        }
        if !check_collision(&self.scene, object, &target, self.config.margin)? {
            let placed = self.execute(object, &target)?;
            self.goal_moves[object] += 1;
            self.record(object, StepKind::GoalMove, Some(target), Some(placed), Some(false));
            return Ok(true);
        }
        self.fail(object);
        self.record(object, StepKind::Blocked, Some(target), None, Some(true));
        if self.state.failure_counts[object] > self.config.fail_threshold {
            self.buffer(object)?;
        }
        Ok(false)
    }
}

/// Runs the rearrangement loop on the instance's initial scene. `estimates`
/// holds one goal offset per scene object; `observer` is consulted for moved
/// objects when the simulator has actuation noise.
pub fn plan_and_execute(
    instance: &RearrangementInstance,
    estimates: &[PoseEstimate],
    config: &PlannerConfig,
    observer: Option<&dyn Reobserver>,
) -> Result<ExecutionResult, PlannerError> {
    let k = instance.object_count();
    if estimates.len() != k {
        return Err(PlannerError::EstimateCount {
            estimates: estimates.len(),
            objects: k,
        });
    }
    let mut ex = Executor {
        instance,
        config,
        observer,
        scene: instance.initial.clone(),
        state: PlanState::new(k),
        log: Vec::new(),
        goal_moves: vec![0; k],
        buffer_moves: vec![0; k],
        expected: instance.initial.placements.iter().map(|p| p.pose).collect(),
        moved: vec![false; k],
    };
    let limit = config.outer_limit(k);
    while !ex.state.remaining.is_empty() {
        ex.state.outer_iterations += 1;
        for object in ex.state.remaining.clone() {
            if ex.visit(object, &estimates[object])? {
                ex.state.remaining.retain(|&o| o != object);
            }
        }
        if ex.state.outer_iterations > limit {
            break;
        }
    }
    debug!(
        "planner finished after {} iterations, {} steps, {} remaining",
        ex.state.outer_iterations,
        ex.log.len(),
        ex.state.remaining.len()
    );
    Ok(ExecutionResult {
        completed: ex.state.remaining.is_empty(),
        log: ex.log,
        goal_moves: ex.goal_moves,
        buffer_moves: ex.buffer_moves,
        final_scene: ex.scene,
        state: ex.state,
    })
}

#[cfg(test)]
mod tests;
