use std::path::Path;

use serde::{Deserialize, Serialize};

use super::region::{RegionObservation, Segmentation};
use super::PerceptionError;
use crate::geometry::{CameraIntrinsics, PointCloud, Pose3, UnitVec3, Vec3};

/// One database item: segmentation, descriptor, cloud and observation
/// vector of an object seen in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRegion {
    pub observation: RegionObservation,
    /// Unit norm.
    pub descriptor: Vec<f64>,
    pub obs_vec: UnitVec3,
}

impl ObjectRegion {
    pub fn frame_id(&self) -> u32 {
        self.observation.frame_id
    }

    pub fn viewpoint(&self) -> &Pose3 {
        &self.observation.viewpoint
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.observation.segmentation
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.observation.cloud
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionRef {
    pub instance: usize,
    pub index: usize,
}

/// Regions grouped into per-instance lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Database {
    pub instances: Vec<Vec<ObjectRegion>>,
    pub instance_centroids: Vec<Vec3>,
}

impl Database {
    pub fn from_instances(instances: Vec<Vec<ObjectRegion>>) -> Self {
        let instance_centroids = instances
            .iter()
            .map(|list| list.iter().map(|r| r.cloud().centroid()).sum::<Vec3>() / list.len() as f64)
            .collect();
        Self {
            instances,
            instance_centroids,
        }
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn region_count(&self) -> usize {
        self.instances.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.region_count() == 0
    }

    pub fn region(&self, r: RegionRef) -> &ObjectRegion {
        &self.instances[r.instance][r.index]
    }

    pub fn regions(&self) -> impl Iterator<Item = (RegionRef, &ObjectRegion)> {
        self.instances.iter().enumerate().flat_map(|(instance, list)| {
            list.iter()
                .enumerate()
                .map(move |(index, r)| (RegionRef { instance, index }, r))
        })
    }

    /// Instance whose centroid is nearest to `p`.
    pub fn nearest_instance(&self, p: &Vec3) -> Option<usize> {
        self.instance_centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (c - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn to_dump(&self, detail: DumpDetail) -> DatabaseDump {
        DatabaseDump {
            format: DUMP_FORMAT.to_string(),
            version: DUMP_VERSION,
            instance_centroids: self.instance_centroids.iter().map(|c| [c.x, c.y, c.z]).collect(),
            instances: self
                .instances
                .iter()
                .map(|list| list.iter().map(|r| DumpRegion::new(r, detail)).collect())
                .collect(),
        }
    }

    pub fn from_dump(dump: DatabaseDump) -> Result<Self, PerceptionError> {
        if dump.format != DUMP_FORMAT || dump.version != DUMP_VERSION {
            return Err(PerceptionError::Dump(format!(
                "unsupported database format {} v{}",
                dump.format, dump.version
            )));
        }
        let instances = dump
            .instances
            .into_iter()
            .map(|list| list.into_iter().map(DumpRegion::into_region).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let instance_centroids = dump.instance_centroids.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Ok(Self {
            instances,
            instance_centroids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PerceptionError> {
        let text = serde_json::to_string(&self.to_dump(DumpDetail::Full)).map_err(|e| PerceptionError::Dump(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let text = std::fs::read_to_string(path).map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))?;
        let dump: DatabaseDump =
            serde_json::from_str(&text).map_err(|e| PerceptionError::Dump(format!("{}: {e}", path.display())))?;
        Self::from_dump(dump)
    }
}

pub const DUMP_FORMAT: &str = "mvrearrange-database";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpDetail {
    /// Everything needed to localize against the database again.
    Full,
    /// Descriptors, observation vectors, poses and cloud summaries only.
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseDump {
    pub format: String,
    pub version: u32,
    pub instance_centroids: Vec<[f64; 3]>,
    pub instances: Vec<Vec<DumpRegion>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRegion {
    pub source_frame_id: u32,
    /// Camera-in-world pose, row-major 4x4.
    pub viewpoint: [[f64; 4]; 4],
    pub intrinsics: CameraIntrinsics,
    pub descriptor: Vec<f64>,
    pub obs_vec: [f64; 3],
    pub cloud_centroid: [f64; 3],
    pub cloud_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

impl DumpRegion {
    fn new(r: &ObjectRegion, detail: DumpDetail) -> Self {
        let c = r.cloud().centroid();
        let e = r.obs_vec.as_vec();
        let full = detail == DumpDetail::Full;
        Self {
            source_frame_id: r.frame_id(),
            viewpoint: r.viewpoint().to_rows(),
            intrinsics: r.observation.intrinsics,
            descriptor: r.descriptor.clone(),
            obs_vec: [e.x, e.y, e.z],
            cloud_centroid: [c.x, c.y, c.z],
            cloud_points: r.cloud().len(),
            points: full.then(|| r.cloud().points().iter().map(|p| [p.x, p.y, p.z]).collect()),
            segmentation: full.then(|| r.segmentation().clone()),
        }
    }

    fn into_region(self) -> Result<ObjectRegion, PerceptionError> {
        let (Some(points), Some(segmentation)) = (self.points, self.segmentation) else {
            return Err(PerceptionError::Dump("summary dumps cannot be reloaded".into()));
        };
        let cloud = PointCloud::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())?;
        let e = Vec3::new(self.obs_vec[0], self.obs_vec[1], self.obs_vec[2]);
        Ok(ObjectRegion {
            observation: RegionObservation {
                frame_id: self.source_frame_id,
                viewpoint: Pose3::from_rows(&self.viewpoint),
                intrinsics: self.intrinsics,
                segmentation,
                cloud,
            },
            descriptor: self.descriptor,
            obs_vec: UnitVec3::from_unit(e)?,
        })
    }
}
