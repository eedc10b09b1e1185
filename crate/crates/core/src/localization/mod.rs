//! Goal-image localization: retrieve candidate regions, match locally, lift
//! matches to 2D-3D and solve PnP for each object's relative pose.

mod matcher;
pub mod pnp;
mod retrieval;

pub use matcher::{Correspondences2D, DescriptorNNMatcher, Match2D, MatcherBackend, OracleMatcher, OracleMatcherConfig};
pub use pnp::{ransac_pnp, refine_pose, reprojection_errors, solve_pnp, RansacConfig, RansacOutcome};
pub use retrieval::{
    candidates_of, prune_after_rejection, rank_instances, rank_regions, retrieve_candidates, Candidate, CandidateList,
};

use log::trace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PlanarTransform, PlanarityTolerance, Pose3, Vec3};
use crate::perception::{
    describe_frame, Database, DescriptorBackend, ObjectRegion, PerceptionConfig, PerceptionError, RegionRef,
    Segmentation, Segmenter,
};
use crate::seeding;
use crate::sim::Frame;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("{0} correspondences, at least 4 are needed")]
    TooFewCorrespondences(usize),
    #[error("no sampled point set gave a usable pose")]
    DegenerateGeometry,
    #[error("database has no regions")]
    NoCandidates,
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D {
    /// Goal-image pixel coordinates.
    pub goal: [f64; 2],
    /// World point from the candidate region's cloud.
    pub world: Vec3,
}

pub type Correspondences3D = Vec<Correspondence3D>;

/// Maps matches back to goal-image pixels and to the candidate's stored
/// world points; candidate locations without a depth sample are dropped.
pub fn lift_to_3d(
    m2d: &Correspondences2D,
    goal: &Segmentation,
    candidate: &Segmentation,
) -> Result<Correspondences3D, LocalizationError> {
    let tg = goal.square_transform(m2d.resolution);
    let tc = candidate.square_transform(m2d.resolution);
    let lifted: Correspondences3D = m2d
        .matches
        .iter()
        .filter_map(|m| {
            let (cu, cv) = tc.backward(m.candidate[0], m.candidate[1]);
            if cu < 0.0 || cv < 0.0 {
                return None;
            }
            let s = candidate.sample_at(cu.floor() as u32, cv.floor() as u32)?;
            let (gu, gv) = tg.backward(m.goal[0], m.goal[1]);
            Some(Correspondence3D {
                goal: [gu, gv],
                world: s.world,
            })
        })
        .collect();
    if lifted.len() < 4 {
        return Err(LocalizationError::TooFewCorrespondences(lifted.len()));
    }
    Ok(lifted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Relative pose taking the object from its current to its goal pose.
    pub transform: Pose3,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub correspondences: usize,
    pub candidate: Option<RegionRef>,
    pub accepted: bool,
}

impl PoseEstimate {
    /// Estimate used when nothing could be solved: leave the object where it is.
    pub fn identity() -> Self {
        Self {
            transform: Pose3::identity(),
            inlier_count: 0,
            inlier_ratio: 0.0,
            correspondences: 0,
            candidate: None,
            accepted: false,
        }
    }

    pub fn planar(&self) -> PlanarTransform {
        PlanarTransform::from_pose(&self.transform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    /// Regions taking part in the instance vote.
    pub top_n: usize,
    /// Candidates seen from within this angle of a rejected one are skipped.
    pub prune_angle: f64,
    /// Side of the square crops passed to the matcher.
    pub match_resolution: usize,
    /// Further instances tried, in vote order, when every candidate of the
    /// voted instance is rejected.
    pub fallback_instances: usize,
    /// Re-fit accepted-shape solutions as a motion in the table plane.
    pub planar_refinement: bool,
    pub ransac: RansacConfig,
    pub planarity: PlanarityTolerance,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            prune_angle: std::f64::consts::FRAC_PI_6,
            match_resolution: 256,
            fallback_instances: 1,
            planar_refinement: true,
            ransac: RansacConfig::default(),
            planarity: PlanarityTolerance::default(),
        }
    }
}

/// Robust PnP on goal pixels against current-scene world points. The
/// recovered extrinsics `W` satisfy `W = inverse(goal_viewpoint) ∘ T`, so the
/// relative pose is `T = goal_viewpoint ∘ W`.
pub fn solve_pose(
    m3d: &[Correspondence3D],
    intr: &CameraIntrinsics,
    goal_viewpoint: &Pose3,
    config: &LocalizationConfig,
    stream: u64,
) -> Result<PoseEstimate, LocalizationError> {
    let world: Vec<Vec3> = m3d.iter().map(|c| c.world).collect();
    let pixels: Vec<[f64; 2]> = m3d.iter().map(|c| c.goal).collect();
    let out = ransac_pnp(&world, &pixels, intr, &config.ransac, stream)?;
    let mut transform = goal_viewpoint.compose(&out.world_to_cam);
    let mut inliers = out.inliers;
    // the out-of-plane rotation screens out wrong solutions; a vertical
    // offset alone is the usual depth error of a small object and is
    // removed by the planar re-fit
    if config.planar_refinement && transform.tilt() <= config.planarity.max_tilt && inliers.len() >= 3 {
        let mut planar = PlanarTransform::from_pose(&transform);
        for _ in 0..2 {
            let w_in: Vec<Vec3> = inliers.iter().map(|&i| world[i]).collect();
            let p_in: Vec<[f64; 2]> = inliers.iter().map(|&i| pixels[i]).collect();
            planar = pnp::refine_planar(&planar, goal_viewpoint, &w_in, &p_in, intr, config.ransac.refine_iterations);
            let extrinsics = goal_viewpoint.inverse().compose(&planar.lift());
            let next = pnp::inliers_of(&extrinsics, &world, &pixels, intr, config.ransac.threshold_px);
            let settled = next == inliers;
            inliers = next;
            if settled || inliers.len() < 3 {
                break;
            }
        }
        transform = planar.lift();
    }
    let inlier_count = inliers.len();
    let inlier_ratio = inlier_count as f64 / m3d.len() as f64;
    let accepted = inlier_count >= config.ransac.min_inliers
        && inlier_ratio >= config.ransac.min_inlier_ratio
        && config.planarity.check(&transform).is_ok();
    Ok(PoseEstimate {
        transform,
        inlier_count,
        inlier_ratio,
        correspondences: m3d.len(),
        candidate: None,
        accepted,
    })
}

/// Result of localizing one goal region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    /// Instance the goal region was assigned to.
    pub instance: Option<usize>,
    pub estimate: PoseEstimate,
    /// Candidates evaluated, in order.
    pub visited: Vec<RegionRef>,
    pub matcher_invocations: usize,
}

fn region_key(r: &ObjectRegion) -> u64 {
    let m = &r.segmentation().mask;
    seeding::mix(r.frame_id() as u64, &[m.x0 as u64, m.y0 as u64, m.width as u64, m.height as u64])
}

/// Walks the candidates of the retrieved instance until one is accepted,
/// pruning around each rejection; falls back to the next voted instances.
pub fn estimate_object(
    goal: &ObjectRegion,
    db: &Database,
    matcher: &dyn MatcherBackend,
    config: &LocalizationConfig,
    excluded: &[usize],
) -> Result<ObjectEstimate, LocalizationError> {
    if db.is_empty() {
        return Err(LocalizationError::NoCandidates);
    }
    let ranking = rank_instances(&goal.descriptor, db, config.top_n, excluded);
    if ranking.is_empty() {
        return Ok(ObjectEstimate {
            instance: None,
            estimate: PoseEstimate::identity(),
            visited: vec![],
            matcher_invocations: 0,
        });
    }
    let goal_key = region_key(goal);
    let mut visited = Vec::new();
    let mut invocations = 0;
    let mut best_effort: Option<(usize, PoseEstimate)> = None;

    for (rank, &(instance, votes)) in ranking.iter().enumerate() {
        if rank > 0 && (rank > config.fallback_instances || votes == 0) {
            break;
        }
        let mut list = candidates_of(&goal.descriptor, db, instance);
        while let Some(ci) = list.next_open() {
            list.candidates[ci].visited = true;
            let cref = list.candidates[ci].region;
            visited.push(cref);
            let cand = db.region(cref);
            let stream = seeding::mix(goal_key, &[cref.instance as u64, cref.index as u64]);
            invocations += 1;
            let m2d = matcher.match_regions(goal.segmentation(), cand.segmentation(), config.match_resolution, stream);
            let solved = lift_to_3d(&m2d, goal.segmentation(), cand.segmentation()).and_then(|m3d| {
                solve_pose(&m3d, &goal.observation.intrinsics, goal.viewpoint(), config, stream)
            });
            match solved {
                Ok(mut est) => {
                    est.candidate = Some(cref);
                    trace!(
                        "candidate {cref:?}: {} / {} inliers, accepted {}",
                        est.inlier_count,
                        est.correspondences,
                        est.accepted
                    );
                    if est.accepted {
                        return Ok(ObjectEstimate {
                            instance: Some(instance),
                            estimate: est,
                            visited,
                            matcher_invocations: invocations,
                        });
                    }
                    let planar = config.planarity.check(&est.transform).is_ok();
                    if planar && best_effort.as_ref().is_none_or(|(_, b)| est.inlier_count > b.inlier_count) {
                        best_effort = Some((instance, est));
                    }
                }
                Err(e) => trace!("candidate {cref:?} rejected: {e}"),
            }
            prune_after_rejection(&mut list, ci, db, config.prune_angle);
        }
    }
    let (instance, estimate) = best_effort.unwrap_or((ranking[0].0, PoseEstimate::identity()));
    Ok(ObjectEstimate {
        instance: Some(instance),
        estimate,
        visited,
        matcher_invocations: invocations,
    })
}

/// One segmented goal object and its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalObject {
    pub region: ObjectRegion,
    pub result: ObjectEstimate,
    /// Instances this goal region lost to other goal regions.
    pub excluded: Vec<usize>,
}

/// Segments the goal frame and localizes every goal region. When two goal
/// regions claim the same instance the one with the higher inlier ratio
/// keeps it and the other is re-run without that instance.
pub fn estimate_all(
    goal_frame: &Frame,
    db: &Database,
    segmenter: &dyn Segmenter,
    backend: &dyn DescriptorBackend,
    matcher: &dyn MatcherBackend,
    perception: &PerceptionConfig,
    config: &LocalizationConfig,
) -> Result<Vec<GoalObject>, LocalizationError> {
    let regions = describe_frame(goal_frame, segmenter, backend, perception)?;
    estimate_regions(regions, db, matcher, config)
}

pub fn estimate_regions(
    regions: Vec<ObjectRegion>,
    db: &Database,
    matcher: &dyn MatcherBackend,
    config: &LocalizationConfig,
) -> Result<Vec<GoalObject>, LocalizationError> {
    let mut objects: Vec<GoalObject> = regions
        .into_par_iter()
        .map(|region| {
            let result = estimate_object(&region, db, matcher, config, &[])?;
            Ok(GoalObject {
                region,
                result,
                excluded: vec![],
            })
        })
        .collect::<Result<_, LocalizationError>>()?;

    for _ in 0..=db.instance_count() {
        let mut losers = Vec::new();
        for instance in 0..db.instance_count() {
            let claimants: Vec<usize> = (0..objects.len())
                .filter(|&i| objects[i].result.instance == Some(instance))
                .collect();
            if claimants.len() < 2 {
                continue;
            }
            let winner = *claimants
                .iter()
                .max_by(|&&a, &&b| {
                    let (ea, eb) = (&objects[a].result.estimate, &objects[b].result.estimate);
                    (ea.accepted, ea.inlier_ratio)
                        .partial_cmp(&(eb.accepted, eb.inlier_ratio))
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .expect("two claimants");
            losers.extend(claimants.into_iter().filter(|&i| i != winner).map(|i| (i, instance)));
        }
        if losers.is_empty() {
            break;
        }
        for (i, instance) in &losers {
            objects[*i].excluded.push(*instance);
        }
        let reruns: Vec<(usize, ObjectEstimate)> = losers
            .par_iter()
            .map(|&(i, _)| Ok((i, estimate_object(&objects[i].region, db, matcher, config, &objects[i].excluded)?)))
            .collect::<Result<_, LocalizationError>>()?;
        for (i, result) in reruns {
            objects[i].result = result;
        }
    }
    Ok(objects)
}

/// One line of the pose report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReportEntry {
    pub goal_region: usize,
    pub instance: Option<usize>,
    pub accepted: bool,
    pub yaw_deg: f64,
    pub tx_cm: f64,
    pub ty_cm: f64,
    pub transform: [[f64; 4]; 4],
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub correspondences: usize,
    pub candidates_visited: usize,
    pub matcher_invocations: usize,
}

pub fn pose_report(objects: &[GoalObject]) -> Vec<PoseReportEntry> {
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let e = &o.result.estimate;
            let p = e.planar();
            PoseReportEntry {
                goal_region: i,
                instance: o.result.instance,
                accepted: e.accepted,
                yaw_deg: p.yaw.to_degrees(),
                tx_cm: p.tx * 100.0,
                ty_cm: p.ty * 100.0,
                transform: e.transform.to_rows(),
                inlier_count: e.inlier_count,
                inlier_ratio: e.inlier_ratio,
                correspondences: e.correspondences,
                candidates_visited: o.result.visited.len(),
                matcher_invocations: o.result.matcher_invocations,
            }
        })
        .collect()
}
