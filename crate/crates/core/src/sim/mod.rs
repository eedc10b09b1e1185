//! Procedural tabletop world: object models, scene generation, point-splat
//! rendering with depth, ground-truth segmentation and pick-and-place
//! actuation.

mod model;
mod render;
mod scene;
mod segment;

pub use model::{decode_model_id, generate_model_library, ModelLibrary, ObjectModel, ShapeFamily};
pub use render::{render, FeatureSample, Frame, PixelSample, GOAL_FRAME_ID, NO_INSTANCE};
pub use scene::{
    apply_move, generate_instance, home_viewpoint, ring_viewpoints, Placement, RearrangementInstance, SceneState,
    TableBounds,
};
pub use segment::{segment, Mask, SegmentationNoise};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("could not place {objects} objects without collision after {attempts} attempts")]
    PlacementFailure { objects: usize, attempts: usize },
    #[error("no point of the scene is visible from the viewpoint")]
    EmptyFrame,
    #[error("target placement of object {0} collides with another object or leaves the table")]
    CollisionAtTarget(usize),
    #[error("object index {0} is not part of the scene")]
    UnknownObject(usize),
    #[error("model library is empty")]
    EmptyLibrary,
    #[error("model {0} is not in the library")]
    UnknownModel(u32),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Range of relative yaw applied between the goal and the initial scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum RotationRegime {
    /// Relative yaw in [-60°, 60°].
    Minor,
    /// Relative yaw in [-180°, 180°].
    Full,
}

impl RotationRegime {
    pub fn max_abs_yaw(&self) -> f64 {
        match self {
            RotationRegime::Minor => 60f64.to_radians(),
            RotationRegime::Full => std::f64::consts::PI,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RotationRegime::Minor => "minor",
            RotationRegime::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seed for scene generation.
    pub seed: u64,
    /// Seed for the procedural model library.
    pub library_seed: u64,
    pub library_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Table extent in x and y, meters, centered on the world origin.
    pub table_size: [f64; 2],
    /// Extra gap kept between footprint discs when generating scenes.
    pub placement_clearance: f64,
    pub ring_count: usize,
    /// Horizontal distance of the ring cameras from the table center.
    pub ring_radius: f64,
    pub ring_elevation_deg: f64,
    /// Eye position of the frontal home camera.
    pub home_eye: [f64; 3],
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    pub rotation: RotationRegime,
    /// Standard deviation of pick-and-place error in yaw (rad) and x/y (m).
    pub actuation_noise: f64,
    /// Mean spacing of surface samples on the object models, meters.
    pub point_spacing: f64,
    pub point_descriptor_dim: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            library_seed: 0,
            library_size: 24,
            min_objects: 1,
            max_objects: 9,
            table_size: [1.0, 1.0],
            placement_clearance: 0.02,
            ring_count: 8,
            ring_radius: 0.8,
            ring_elevation_deg: 45.0,
            home_eye: [0.0, -0.85, 0.95],
            image_width: 640,
            image_height: 480,
            focal_px: 450.0,
            rotation: RotationRegime::Full,
            actuation_noise: 0.0,
            point_spacing: 0.006,
            point_descriptor_dim: 32,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if !(self.table_size[0] > 0.0 && self.table_size[1] > 0.0) {
            return bad("table size must be positive");
        }
        if self.ring_count == 0 {
            return bad("ring needs at least one viewpoint");
        }
        if !(self.ring_radius > 0.0) || !(self.ring_elevation_deg > 0.0 && self.ring_elevation_deg < 90.0) {
            return bad("ring radius must be positive and elevation in (0, 90) degrees");
        }
        if self.library_size == 0 {
            return bad("library must contain at least one model");
        }
        if !(self.point_spacing > 0.0) || self.point_descriptor_dim == 0 {
            return bad("point spacing and descriptor dimension must be positive");
        }
        if !(self.actuation_noise >= 0.0) || !(self.placement_clearance >= 0.0) {
            return bad("noise and clearance must be non-negative");
        }
        self.intrinsics()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        Ok(CameraIntrinsics::centered(self.focal_px, self.image_width, self.image_height)?)
    }

    pub fn table(&self) -> TableBounds {
        TableBounds::centered(self.table_size[0], self.table_size[1])
    }
}
