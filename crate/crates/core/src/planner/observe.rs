use crate::geometry::{CameraIntrinsics, PlanarTransform, Pose3};
use crate::localization::{estimate_object, LocalizationConfig, MatcherBackend};
use crate::perception::{describe_frame, Database, DescriptorBackend, ObjectRegion, PerceptionConfig, Segmenter};
use crate::sim::{render, ModelLibrary, SceneState, GOAL_FRAME_ID};

use super::PlannerError;

/// Source of refreshed displacement estimates for objects that have moved.
pub trait Reobserver {
    /// Displacement of `object` since the database scene. `expected` is
    /// where the planner last put it.
    fn reobserve(&self, scene: &SceneState, object: usize, expected: &PlanarTransform)
        -> Result<PlanarTransform, PlannerError>;
}

/// Renders the scene from the home camera and localizes one object against
/// the database, exactly as for the goal image.
pub struct HomeViewObserver<'a> {
    pub library: &'a ModelLibrary,
    pub database: &'a Database,
    pub segmenter: &'a dyn Segmenter,
    pub backend: &'a dyn DescriptorBackend,
    pub matcher: &'a dyn MatcherBackend,
    pub perception: &'a PerceptionConfig,
    pub localization: &'a LocalizationConfig,
    pub home: Pose3,
    pub intrinsics: CameraIntrinsics,
    /// Database instance of each scene object.
    pub instances: Vec<Option<usize>>,
}

impl Reobserver for HomeViewObserver<'_> {
    fn reobserve(
        &self,
        scene: &SceneState,
        object: usize,
        expected: &PlanarTransform,
    ) -> Result<PlanarTransform, PlannerError> {
        let failed = || PlannerError::ReobservationFailed(object);
        let instance = self.instances.get(object).copied().flatten().ok_or_else(failed)?;
        let frame = render(scene, &self.home, &self.intrinsics, self.library, GOAL_FRAME_ID)?;
        let regions = describe_frame(&frame, self.segmenter, self.backend, self.perception).map_err(|_| failed())?;
        // the region closest to where the object was put down
        let region = regions
            .iter()
            .min_by(|a, b| {
                let d = |r: &&ObjectRegion| {
                    let c = r.cloud().centroid();
                    (c.x - expected.tx).hypot(c.y - expected.ty)
                };
                d(a).total_cmp(&d(b))
            })
            .ok_or_else(failed)?;
        let others: Vec<usize> = (0..self.database.instance_count()).filter(|&i| i != instance).collect();
        let result =
            estimate_object(region, self.database, self.matcher, self.localization, &others).map_err(|_| failed())?;
        if result.instance != Some(instance) || !result.estimate.accepted {
            return Err(failed());
        }
        Ok(result.estimate.planar())
    }
}
