use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::metrics::{compute_metrics, CompletionRecord, MetricsReport, PoseRecord};
use super::{BenchConfig, HarnessError, ViewMode, Workbench};
use crate::geometry::{planar_difference, PlanarTransform};
use crate::localization::GoalObject;
use crate::perception::Database;
use crate::sim::RotationRegime;

pub fn scene_seeds(config: &BenchConfig) -> Vec<u64> {
    (0..config.scenes as u64).map(|i| config.seed.wrapping_add(i)).collect()
}

/// Ground-truth object of each database instance (most frequent among its
/// regions) and whether every instance holds exactly one object.
fn instance_truth(db: &Database) -> (Vec<Option<u32>>, bool) {
    let mut pure = true;
    let truth: Vec<Option<u32>> = db
        .instances
        .iter()
        .map(|regions| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for r in regions {
                if let Some(id) = r.segmentation().majority_instance() {
                    *counts.entry(id).or_default() += 1;
                }
            }
            pure &= counts.len() == 1;
            counts.into_iter().max_by_key(|&(id, c)| (c, std::cmp::Reverse(id))).map(|(id, _)| id)
        })
        .collect();
    let mut ids: Vec<u32> = truth.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    pure &= ids.len() == truth.len();
    (truth, pure)
}

fn pose_records(wb: &Workbench, seed: u64, regime: RotationRegime, view: ViewMode) -> Result<Vec<PoseRecord>, HarnessError> {
    let inst = wb.instance(seed, regime)?;
    let db = wb.database(&inst, view)?;
    let objects = wb.localize(&inst, &db)?;
    let (truth, pure) = instance_truth(&db);

    let mut by_object: BTreeMap<u32, (usize, &GoalObject)> = BTreeMap::new();
    for (i, o) in objects.iter().enumerate() {
        if let Some(id) = o.region.segmentation().majority_instance() {
            by_object.entry(id).or_insert((i, o));
        }
    }
    let records = (0..inst.object_count() as u32)
        .map(|object| {
            let truth_offset = &inst.true_offsets[object as usize];
            let found = by_object.get(&object);
            let estimate = found.map(|(_, o)| &o.result.estimate);
            let planar = estimate.map_or(PlanarTransform::identity(), |e| PlanarTransform::from_pose(&e.transform));
            let err = planar_difference(&planar, truth_offset);
            let instance = found.and_then(|(_, o)| o.result.instance);
            PoseRecord {
                regime,
                view,
                scene_seed: seed,
                object,
                goal_region: found.map(|(i, _)| *i),
                instance,
                accepted: estimate.is_some_and(|e| e.accepted),
                retrieval_correct: found.map(|_| instance.is_some_and(|u| truth[u] == Some(object))),
                database_pure: pure,
                rotation_error_deg: err.rotation_deg,
                translation_error_cm: err.translation_cm,
                inliers: estimate.map_or(0, |e| e.inlier_count),
                correspondences: estimate.map_or(0, |e| e.correspondences),
                candidates_visited: found.map_or(0, |(_, o)| o.result.visited.len()),
                matcher_invocations: found.map_or(0, |(_, o)| o.result.matcher_invocations),
            }
        })
        .collect();
    Ok(records)
}

fn completion_record(wb: &Workbench, seed: u64, regime: RotationRegime) -> Result<CompletionRecord, HarnessError> {
    let inst = wb.instance(seed, regime)?;
    let db = wb.database(&inst, ViewMode::MultiView)?;
    let objects = wb.localize(&inst, &db)?;
    let exec = wb.rearrange(&inst, &db, &objects)?;
    let thresholds = (wb.config.planner.success_rotation_deg, wb.config.planner.success_translation_cm);
    let errors: Vec<_> = exec
        .final_scene
        .placements
        .iter()
        .zip(&inst.goal.placements)
        .map(|(a, g)| planar_difference(&a.pose, &g.pose))
        .collect();
    let multi = errors.iter().all(|e| e.within(thresholds.0, thresholds.1));
    let counts = exec.manipulation_counts();
    Ok(CompletionRecord {
        regime,
        scene_seed: seed,
        objects: inst.object_count(),
        accepted_estimates: objects.iter().filter(|o| o.result.estimate.accepted).count(),
        multi_step_success: multi,
        one_step_success: multi && exec.goal_moves.iter().all(|&g| g <= 1),
        planner_completed: exec.completed,
        manipulations: exec.manipulations(),
        goal_moves: exec.goal_moves.iter().sum(),
        buffer_moves: exec.buffer_moves.iter().sum(),
        outer_iterations: exec.state.outer_iterations,
        max_rotation_error_deg: errors.iter().map(|e| e.rotation_deg).fold(0.0, f64::max),
        max_translation_error_cm: errors.iter().map(|e| e.translation_cm).fold(0.0, f64::max),
        matcher_invocations: objects.iter().map(|o| o.result.matcher_invocations).sum(),
        per_object_manipulations: counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
    })
}

fn skipped_label(regime: RotationRegime, seed: u64, view: Option<ViewMode>, err: &HarnessError) -> String {
    let label = match view {
        Some(v) => format!("{}:{}:{seed}", regime.name(), v.name()),
        None => format!("{}:{seed}", regime.name()),
    };
    warn!("scene {label} skipped: {err}");
    label
}

/// Localizes every object of every scene, per rotation regime, against the
/// multi-view database and optionally the single-view one.
pub fn run_pose_bench(config: &BenchConfig) -> Result<MetricsReport, HarnessError> {
    let start = Instant::now();
    let wb = Workbench::new(config.clone())?;
    let mut views = vec![ViewMode::MultiView];
    if config.single_view_ablation {
        views.push(ViewMode::SingleView);
    }
    let tasks: Vec<(RotationRegime, ViewMode, u64)> = config
        .regimes
        .iter()
        .flat_map(|&r| views.iter().flat_map(move |&v| scene_seeds(config).into_iter().map(move |s| (r, v, s))))
        .collect();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(regime, view, seed)| (regime, view, seed, pose_records(&wb, seed, regime, view)))
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (regime, view, seed, result) in results {
        match result {
            Ok(rs) => records.extend(rs),
            Err(e) => skipped.push(skipped_label(regime, seed, Some(view), &e)),
        }
    }
    let report = compute_metrics(config, records, vec![], skipped, start.elapsed());
    info!("pose bench: {} scene runs in {:.1?}", tasks.len(), report.wall_clock);
    Ok(report)
}

/// Full perception and planning per scene and rotation regime.
pub fn run_completion_bench(config: &BenchConfig) -> Result<MetricsReport, HarnessError> {
    let start = Instant::now();
    let wb = Workbench::new(config.clone())?;
    let tasks: Vec<(RotationRegime, u64)> = config
        .regimes
        .iter()
        .flat_map(|&r| scene_seeds(config).into_iter().map(move |s| (r, s)))
        .collect();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(regime, seed)| (regime, seed, completion_record(&wb, seed, regime)))
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (regime, seed, result) in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => skipped.push(skipped_label(regime, seed, None, &e)),
        }
    }
    let report = compute_metrics(config, vec![], records, skipped, start.elapsed());
    info!("completion bench: {} scene runs in {:.1?}", tasks.len(), report.wall_clock);
    Ok(report)
}
