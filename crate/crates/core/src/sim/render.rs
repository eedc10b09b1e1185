use serde::{Deserialize, Serialize};

use super::{ModelLibrary, SceneState, SimError};
use crate::geometry::{back_project_from_viewpoint, project_camera_point, CameraIntrinsics, Pose3, Vec3};

/// Marker for "no object" in the instance image.
pub const NO_INSTANCE: u32 = u32::MAX;

/// Frame id used for goal images.
pub const GOAL_FRAME_ID: u32 = 1_000_000;

/// Depth slack when testing a point against the splatted z-buffer.
const DEPTH_EPS: f64 = 0.01;
/// Splat radius relative to the projected sample spacing.
const SPLAT_SCALE: f64 = 0.6;
const MAX_SPLAT_RADIUS: i64 = 8;

/// Identity of the surface point seen at a pixel: the stand-in for local
/// appearance in the feature image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub feature_id: u64,
    pub instance_id: u32,
    /// Subpixel image location of the point.
    pub u: f64,
    pub v: f64,
    /// Direction from the point toward the camera in the object's local
    /// frame. Determines how the local patch looks.
    pub view_dir: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    pub x: u32,
    pub y: u32,
    pub depth: f64,
    pub sample: FeatureSample,
}

/// One rendered observation: sparse feature image with depth at every
/// feature pixel, dense ground-truth instance image, and the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u32,
    pub viewpoint: Pose3,
    pub intrinsics: CameraIntrinsics,
    /// Sorted by `(y, x)`; at most one per pixel.
    pub samples: Vec<PixelSample>,
    /// Row-major, `NO_INSTANCE` where no object covers the pixel.
    pub instances: Vec<u32>,
}

impl Frame {
    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn sample_at(&self, x: u32, y: u32) -> Option<&PixelSample> {
        self.samples
            .binary_search_by(|s| (s.y, s.x).cmp(&(y, x)))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn depth_at(&self, x: u32, y: u32) -> Option<f64> {
        self.sample_at(x, y).map(|s| s.depth)
    }

    pub fn instance_at(&self, x: u32, y: u32) -> Option<u32> {
        let id = self.instances[(y * self.width() + x) as usize];
        (id != NO_INSTANCE).then_some(id)
    }

    /// World position of a feature sample, from its subpixel location and
    /// depth.
    pub fn world_point(&self, s: &PixelSample) -> Vec3 {
        back_project_from_viewpoint(&self.intrinsics, &self.viewpoint, s.sample.u, s.sample.v, s.depth)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

struct Projected {
    px: u32,
    py: u32,
    depth: f64,
    radius: i64,
    sample: FeatureSample,
}

/// Point-splat rendering. A model point is visible when it faces the camera
/// and survives the z-buffer built from every point's splat footprint.
pub fn render(
    scene: &SceneState,
    viewpoint: &Pose3,
    intr: &CameraIntrinsics,
    library: &ModelLibrary,
    frame_id: u32,
) -> Result<Frame, SimError> {
    let world_to_cam = viewpoint.inverse();
    let eye = viewpoint.translation;
    let (w, h) = (intr.width as i64, intr.height as i64);

    let mut projected = Vec::new();
    for (instance, placement) in scene.placements.iter().enumerate() {
        let model = library
            .get(placement.model_id)
            .ok_or(SimError::UnknownModel(placement.model_id))?;
        let pose = placement.pose.lift();
        let eye_local = pose.inverse().transform_point(&eye);
        for i in 0..model.len() {
            let p_local = model.points[i];
            let to_eye = eye_local - p_local;
            if model.normals[i].dot(&to_eye) <= 0.0 {
                continue;
            }
            let pc = world_to_cam.transform_point(&pose.transform_point(&p_local));
            let Ok(proj) = project_camera_point(intr, &pc) else {
                continue;
            };
            if !intr.contains(proj.u, proj.v) {
                continue;
            }
            let spacing_px = model.spacing * intr.fx / proj.depth;
            let radius = ((SPLAT_SCALE * spacing_px).ceil() as i64).clamp(0, MAX_SPLAT_RADIUS);
            let dir = to_eye.normalize();
            projected.push(Projected {
                px: proj.u.floor() as u32,
                py: proj.v.floor() as u32,
                depth: proj.depth,
                radius,
                sample: FeatureSample {
                    feature_id: model.feature_ids[i],
                    instance_id: instance as u32,
                    u: proj.u,
                    v: proj.v,
                    view_dir: [dir.x as f32, dir.y as f32, dir.z as f32],
                },
            });
        }
    }

    let npix = (w * h) as usize;
    let mut zbuf = vec![f64::INFINITY; npix];
    let mut instances = vec![NO_INSTANCE; npix];
    for p in &projected {
        let (cx, cy) = (p.px as i64, p.py as i64);
        for y in (cy - p.radius).max(0)..=(cy + p.radius).min(h - 1) {
            for x in (cx - p.radius).max(0)..=(cx + p.radius).min(w - 1) {
                let k = (y * w + x) as usize;
                if p.depth < zbuf[k] {
                    zbuf[k] = p.depth;
                    instances[k] = p.sample.instance_id;
                }
            }
        }
    }

    // nearest surviving point per pixel
    let mut best: Vec<Option<usize>> = vec![None; npix];
    for (i, p) in projected.iter().enumerate() {
        let k = (p.py as i64 * w + p.px as i64) as usize;
        if p.depth > zbuf[k] + DEPTH_EPS {
            continue;
        }
        match best[k] {
            Some(j) if projected[j].depth <= p.depth => {}
            _ => best[k] = Some(i),
        }
    }
    let mut samples: Vec<PixelSample> = best
        .iter()
        .flatten()
        .map(|&i| {
            let p = &projected[i];
            PixelSample {
                x: p.px,
                y: p.py,
                depth: p.depth,
                sample: p.sample,
            }
        })
        .collect();
    if samples.is_empty() {
        return Err(SimError::EmptyFrame);
    }
    samples.sort_by_key(|s| (s.y, s.x));
    // the silhouette under a visible sample belongs to that sample's object
    for s in &samples {
        instances[(s.y as i64 * w + s.x as i64) as usize] = s.sample.instance_id;
    }
    Ok(Frame {
        frame_id,
        viewpoint: *viewpoint,
        intrinsics: *intr,
        samples,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PlanarTransform, Pose3};
    use crate::sim::{generate_model_library, Placement, ShapeFamily, SimConfig, TableBounds};
    use std::collections::HashSet;

    fn lib() -> ModelLibrary {
        generate_model_library(&SimConfig::default())
    }

    fn scene_with(placements: Vec<Placement>) -> SceneState {
        SceneState {
            table: TableBounds::centered(1.0, 1.0),
            placements,
        }
    }

    fn place(lib: &ModelLibrary, model_id: u32, yaw: f64, x: f64, y: f64) -> Placement {
        Placement {
            model_id,
            pose: PlanarTransform::new(yaw, x, y),
            radius: lib.get(model_id).unwrap().footprint_radius,
        }
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(450.0, 640, 480).unwrap()
    }

    #[test]
    fn top_down_box_shows_only_top_face() {
        let lib = lib();
        let box_id = lib.models.iter().find(|m| m.family == ShapeFamily::Box).unwrap().model_id;
        let model = lib.get(box_id).unwrap();
        let scene = scene_with(vec![place(&lib, box_id, 0.0, 0.0, 0.0)]);
        let cam = Pose3::look_at(Vec3::new(0.0, 0.0, 0.8), Vec3::zeros(), Vec3::y());
        let frame = render(&scene, &cam, &intr(), &lib, 0).unwrap();

        // analytic oracle: a camera on the box axis only sees normals facing up
        let top: HashSet<u64> = (0..model.len())
            .filter(|&i| model.normals[i].z > 0.5)
            .map(|i| model.feature_ids[i])
            .collect();
        assert!(!frame.samples.is_empty());
        for s in &frame.samples {
            assert!(top.contains(&s.sample.feature_id));
        }
        // nearly every top point is visible (a few lose pixel collisions)
        assert!(frame.samples.len() as f64 > 0.7 * top.len() as f64);
    }

    #[test]
    fn nearer_object_wins_contested_pixels() {
        let lib = lib();
        let ids: Vec<u32> = lib.models.iter().take(2).map(|m| m.model_id).collect();
        let scene = scene_with(vec![place(&lib, ids[0], 0.0, 0.0, -0.15), place(&lib, ids[1], 0.3, 0.0, 0.15)]);
        let cam = Pose3::look_at(Vec3::new(0.0, -0.9, 0.15), Vec3::new(0.0, 0.0, 0.05), Vec3::z());
        let intr = intr();
        let frame = render(&scene, &cam, &intr, &lib, 0).unwrap();

        // brute force: among all front-facing points projecting to the same
        // pixel, the visible one must be the nearest
        let w2c = cam.inverse();
        let mut nearest: std::collections::HashMap<(u32, u32), f64> = Default::default();
        for p in &scene.placements {
            let m = lib.get(p.model_id).unwrap();
            let pose = p.pose.lift();
            for i in 0..m.len() {
                let pw = pose.transform_point(&m.points[i]);
                if pose.transform_vector(&m.normals[i]).dot(&(cam.translation - pw)) <= 0.0 {
                    continue;
                }
                if let Ok(pr) = crate::geometry::project(&intr, &w2c, &pw) {
                    if intr.contains(pr.u, pr.v) {
                        let key = (pr.u.floor() as u32, pr.v.floor() as u32);
                        let e = nearest.entry(key).or_insert(f64::INFINITY);
                        *e = e.min(pr.depth);
                    }
                }
            }
        }
        let mut contested_far = 0;
        for s in &frame.samples {
            assert_eq!(s.depth, nearest[&(s.x, s.y)]);
            if s.sample.instance_id == 1 {
                contested_far += 1;
            }
        }
        // the far object is largely hidden but its top still shows
        let near = frame.samples.iter().filter(|s| s.sample.instance_id == 0).count();
        assert!(near > contested_far);
    }

    #[test]
    fn camera_facing_away_gives_empty_frame() {
        let lib = lib();
        let scene = scene_with(vec![place(&lib, 0, 0.0, 0.0, 0.0)]);
        let cam = Pose3::look_at(Vec3::new(0.0, -0.8, 0.8), Vec3::new(0.0, -2.0, 1.5), Vec3::z());
        assert!(matches!(render(&scene, &cam, &intr(), &lib, 0), Err(SimError::EmptyFrame)));
    }

    #[test]
    fn samples_back_project_to_model_points() {
        let lib = lib();
        let config = SimConfig {
            seed: 4,
            ..SimConfig::default()
        };
        let inst = crate::sim::generate_instance(&config, &lib).unwrap();
        for view in inst.ring_viewpoints.iter().chain([&inst.home_viewpoint]) {
            let frame = render(&inst.initial, view, &intr(), &lib, 0).unwrap();
            for s in &frame.samples {
                let placement = &inst.initial.placements[s.sample.instance_id as usize];
                let model = lib.get(placement.model_id).unwrap();
                let truth = placement.pose.lift().transform_point(
                    &model.points[crate::sim::ObjectModel::point_index(s.sample.feature_id)],
                );
                assert!((frame.world_point(s) - truth).norm() < 1e-6);
                assert_eq!(frame.instance_at(s.x, s.y), Some(s.sample.instance_id));
                assert!(s.depth.is_finite());
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let lib = lib();
        let config = SimConfig {
            seed: 9,
            ..SimConfig::default()
        };
        let inst = crate::sim::generate_instance(&config, &lib).unwrap();
        let a = render(&inst.goal, &inst.home_viewpoint, &intr(), &lib, 3).unwrap();
        let b = render(&inst.goal, &inst.home_viewpoint, &intr(), &lib, 3).unwrap();
        assert_eq!(a, b);
    }
}
