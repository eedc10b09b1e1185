//! Object-region database: segmentation, region extraction, global
//! descriptors, observation vectors and k-means instance association.

mod association;
mod database;
mod descriptor;
mod region;

pub use association::{canonical_groups, infer_k, kmeans, Clustering, KMeansConfig};
pub use database::{Database, DatabaseDump, DumpDetail, DumpRegion, ObjectRegion, RegionRef, DUMP_FORMAT, DUMP_VERSION};
pub use descriptor::{dot, extract_descriptor, pad_and_resize, DescriptorBackend, NormalizedCrop, SyntheticDescriptor, GRID};
pub use region::{extract_regions, RegionObservation, RegionSample, Segmentation, SquareTransform};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Vec3};
use crate::sim::{segment, Frame, Mask, SegmentationNoise};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("region mask is empty")]
    EmptyRegion,
    #[error("cannot form {k} clusters from {regions} regions")]
    ClusterCountInfeasible { k: usize, regions: usize },
    #[error("no object regions in any frame")]
    NoRegions,
    #[error("database dump: {0}")]
    Dump(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Instance segmentation of a frame into disjoint masks.
pub trait Segmenter: Sync {
    fn segment(&self, frame: &Frame) -> Vec<(u32, Mask)>;
}

/// Ground-truth masks with the configured corruption.
impl Segmenter for SegmentationNoise {
    fn segment(&self, frame: &Frame) -> Vec<(u32, Mask)> {
        segment(frame, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub min_points: usize,
    /// Upper bound on stored cloud size per region.
    pub max_cloud_points: Option<usize>,
    pub descriptor_dim: usize,
    /// Side of the square crop descriptors are computed on.
    pub resolution: usize,
    pub descriptor_seed: u64,
    pub kmeans: KMeansConfig,
    pub segmentation: SegmentationNoise,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            min_points: 10,
            max_cloud_points: None,
            descriptor_dim: 128,
            resolution: 64,
            descriptor_seed: 0,
            kmeans: KMeansConfig::default(),
            segmentation: SegmentationNoise::none(),
        }
    }
}

impl PerceptionConfig {
    pub fn synthetic_backend(&self, model_count: usize) -> SyntheticDescriptor {
        SyntheticDescriptor::new(self.descriptor_dim, self.descriptor_seed, model_count)
    }
}

/// Segments a frame and returns fully described regions in mask order.
pub fn describe_frame(
    frame: &Frame,
    segmenter: &dyn Segmenter,
    backend: &dyn DescriptorBackend,
    config: &PerceptionConfig,
) -> Result<Vec<ObjectRegion>, PerceptionError> {
    let masks = segmenter.segment(frame);
    extract_regions(frame, &masks, config.min_points, config.max_cloud_points)
        .into_iter()
        .map(|observation| {
            let obs_vec = observation.observation_vector()?;
            let descriptor = extract_descriptor(&observation.segmentation, &obs_vec, backend, config.resolution)?;
            Ok(ObjectRegion {
                observation,
                descriptor,
                obs_vec,
            })
        })
        .collect()
}

/// Clusters regions by cloud centroid into `k` instance lists.
pub fn associate(regions: Vec<ObjectRegion>, k: usize, config: &KMeansConfig) -> Result<Database, PerceptionError> {
    let centroids: Vec<Vec3> = regions.iter().map(|r| r.cloud().centroid()).collect();
    let clustering = kmeans(&centroids, k, config)?;
    let groups = canonical_groups(&clustering.assignments, k);
    let mut slots: Vec<Option<ObjectRegion>> = regions.into_iter().map(Some).collect();
    let instances = groups
        .iter()
        .map(|g| g.iter().map(|&i| slots[i].take().expect("each region in one group")).collect())
        .collect();
    Ok(Database::from_instances(instances))
}

/// Full database pipeline over a set of frames.
pub fn build_database(
    frames: &[Frame],
    segmenter: &dyn Segmenter,
    backend: &dyn DescriptorBackend,
    config: &PerceptionConfig,
) -> Result<Database, PerceptionError> {
    let per_frame: Vec<Vec<ObjectRegion>> = frames
        .par_iter()
        .map(|f| describe_frame(f, segmenter, backend, config))
        .collect::<Result<_, _>>()?;
    let counts: Vec<usize> = per_frame.iter().map(Vec::len).collect();
    let k = infer_k(&counts)?;
    let regions: Vec<ObjectRegion> = per_frame.into_iter().flatten().collect();
    debug!("associating {} regions from {} frames into {k} instances", regions.len(), frames.len());
    associate(regions, k, &config.kmeans)
}
