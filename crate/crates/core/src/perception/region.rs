use log::debug;
use serde::{Deserialize, Serialize};

use crate::geometry::{observation_vector, CameraIntrinsics, PointCloud, Pose3, UnitVec3, Vec3};
use crate::sim::{FeatureSample, Frame, Mask};

use super::PerceptionError;

/// Feature sample inside a region together with its lifted world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub x: u32,
    pub y: u32,
    pub depth: f64,
    pub world: Vec3,
    pub sample: FeatureSample,
}

/// The segmentation `S`: the region's mask and the feature image under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub mask: Mask,
    /// Sorted by `(y, x)`.
    pub samples: Vec<RegionSample>,
}

impl Segmentation {
    pub fn sample_at(&self, x: u32, y: u32) -> Option<&RegionSample> {
        self.samples
            .binary_search_by(|s| (s.y, s.x).cmp(&(y, x)))
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Ground-truth instance most samples belong to.
    pub fn majority_instance(&self) -> Option<u32> {
        let mut counts = std::collections::BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.sample.instance_id).or_insert(0usize) += 1;
        }
        counts.into_iter().max_by_key(|&(id, c)| (c, std::cmp::Reverse(id))).map(|(id, _)| id)
    }

    /// Maps frame pixel coordinates into the square `resolution x resolution`
    /// frame obtained by padding the mask's bounding box to a square and
    /// resizing it.
    pub fn square_transform(&self, resolution: usize) -> SquareTransform {
        let (w, h) = (self.mask.width as f64, self.mask.height as f64);
        let side = w.max(h);
        SquareTransform {
            origin_x: self.mask.x0 as f64 - (side - w) / 2.0,
            origin_y: self.mask.y0 as f64 - (side - h) / 2.0,
            scale: resolution as f64 / side,
        }
    }
}

/// Frame coordinates `p` map to `(p - origin) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub scale: f64,
}

impl SquareTransform {
    pub fn forward(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.origin_x) * self.scale, (v - self.origin_y) * self.scale)
    }

    pub fn backward(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.scale + self.origin_x, y / self.scale + self.origin_y)
    }
}

/// One segmented object observation before descriptor extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionObservation {
    pub frame_id: u32,
    pub viewpoint: Pose3,
    pub intrinsics: CameraIntrinsics,
    pub segmentation: Segmentation,
    pub cloud: PointCloud,
}

impl RegionObservation {
    pub fn observation_vector(&self) -> Result<UnitVec3, PerceptionError> {
        Ok(observation_vector(&self.viewpoint, &self.cloud)?)
    }
}

/// Cuts one region per mask out of the frame and lifts its depth pixels to a
/// world-frame cloud. Regions with fewer than `min_points` depth pixels are
/// dropped. `max_cloud_points` caps the stored cloud by uniform striding;
/// the per-sample world points are always kept.
pub fn extract_regions(
    frame: &Frame,
    masks: &[(u32, Mask)],
    min_points: usize,
    max_cloud_points: Option<usize>,
) -> Vec<RegionObservation> {
    masks
        .iter()
        .filter_map(|(id, mask)| {
            let samples: Vec<RegionSample> = frame
                .samples
                .iter()
                .filter(|s| mask.contains(s.x, s.y))
                .map(|s| RegionSample {
                    x: s.x,
                    y: s.y,
                    depth: s.depth,
                    world: frame.world_point(s),
                    sample: s.sample,
                })
                .collect();
            if samples.len() < min_points.max(1) {
                debug!(
                    "frame {}: dropping region of instance {id} with {} depth pixels",
                    frame.frame_id,
                    samples.len()
                );
                return None;
            }
            let mut points: Vec<Vec3> = samples.iter().map(|s| s.world).collect();
            if let Some(cap) = max_cloud_points {
                if cap > 0 && points.len() > cap {
                    let stride = points.len() as f64 / cap as f64;
                    points = (0..cap).map(|k| points[(k as f64 * stride) as usize]).collect();
                }
            }
            let cloud = PointCloud::new(points).ok()?;
            Some(RegionObservation {
                frame_id: frame.frame_id,
                viewpoint: frame.viewpoint,
                intrinsics: frame.intrinsics,
                segmentation: Segmentation {
                    mask: mask.clone(),
                    samples,
                },
                cloud,
            })
        })
        .collect()
}
