use std::f64::consts::FRAC_PI_2;

use approx::assert_relative_eq;

use super::*;
use crate::localization::{LocalizationConfig, OracleMatcher};
use crate::perception::{build_database, PerceptionConfig};
use crate::sim::{
    generate_instance, generate_model_library, home_viewpoint, render, ring_viewpoints, Placement, SegmentationNoise,
    SimConfig, TableBounds,
};

fn disc(x: f64, y: f64, yaw: f64, radius: f64) -> Placement {
    Placement {
        model_id: 0,
        pose: PlanarTransform::new(yaw, x, y),
        radius,
    }
}

fn scene(placements: Vec<Placement>) -> SceneState {
    SceneState {
        table: TableBounds::centered(1.0, 1.0),
        placements,
    }
}

fn instance(initial: SceneState, goal: SceneState) -> RearrangementInstance {
    let config = SimConfig::default();
    let true_offsets = goal
        .placements
        .iter()
        .zip(&initial.placements)
        .map(|(g, i)| g.pose.compose(&i.pose.inverse()))
        .collect();
    RearrangementInstance {
        home_viewpoint: home_viewpoint(&config),
        ring_viewpoints: ring_viewpoints(&config),
        config,
        initial,
        goal,
        true_offsets,
    }
}

fn exact(inst: &RearrangementInstance) -> Vec<PoseEstimate> {
    inst.true_offsets
        .iter()
        .map(|t| PoseEstimate {
            transform: t.lift(),
            accepted: true,
            ..PoseEstimate::identity()
        })
        .collect()
}

fn reached_goal(result: &ExecutionResult, inst: &RearrangementInstance) -> bool {
    result
        .final_scene
        .placements
        .iter()
        .zip(&inst.goal.placements)
        .all(|(a, g)| planar_difference(&a.pose, &g.pose).within(5.0, 2.0))
}

#[test]
fn collision_check_examples() {
    let lone = scene(vec![disc(0.0, 0.0, 0.0, 0.05)]);
    assert!(!check_collision(&lone, 0, &PlanarTransform::new(1.0, 0.2, 0.1), 0.01).unwrap());

    let pair = scene(vec![disc(0.0, 0.0, 0.0, 0.05), disc(0.3, 0.0, 0.0, 0.05)]);
    assert!(check_collision(&pair, 0, &PlanarTransform::new(0.0, 0.3, 0.0), 0.01).unwrap());
    assert!(check_collision(&pair, 0, &PlanarTransform::new(0.0, 0.195, 0.0), 0.01).unwrap());
    assert!(!check_collision(&pair, 0, &PlanarTransform::new(0.0, 0.185, 0.0), 0.01).unwrap());
    // off the table
    assert!(check_collision(&pair, 0, &PlanarTransform::new(0.0, -0.48, 0.0), 0.01).unwrap());
    assert!(matches!(
        check_collision(&pair, 5, &PlanarTransform::identity(), 0.01),
        Err(PlannerError::UnknownObject(5))
    ));
}

#[test]
fn correction_without_moves_is_the_goal_offset() {
    let t = PlanarTransform::new(0.7, 0.12, -0.05);
    let c = PlanarTransform::from_pose(&correct_pose(&t, &PlanarTransform::identity()));
    assert_relative_eq!(c.yaw, t.yaw, epsilon = 1e-12);
    assert_relative_eq!(c.tx, t.tx, epsilon = 1e-12);
    assert_relative_eq!(c.ty, t.ty, epsilon = 1e-12);
}

#[test]
fn correction_absorbs_a_buffer_displacement() {
    let t = PlanarTransform::new(-1.1, 0.05, 0.3);
    let buffer = PlanarTransform::new(0.0, 0.2, 0.0);
    let c = PlanarTransform::from_pose(&correct_pose(&t, &buffer));
    // applying the correction after the buffer move gives the original offset
    let total = c.compose(&buffer);
    assert_relative_eq!(total.yaw, t.yaw, epsilon = 1e-12);
    assert_relative_eq!(total.tx, t.tx, epsilon = 1e-12);
    assert_relative_eq!(total.ty, t.ty, epsilon = 1e-12);
    // a pure translation shifts the offset by the rotated displacement
    let (dx, dy) = (c.tx - t.tx, c.ty - t.ty);
    assert_relative_eq!(dx.hypot(dy), 0.2, epsilon = 1e-12);
    assert_relative_eq!(c.yaw, t.yaw, epsilon = 1e-12);
}

#[test]
fn buffer_pose_on_a_near_empty_table() {
    let s = scene(vec![disc(0.0, 0.0, 0.0, 0.05), disc(0.3, 0.3, 0.0, 0.05)]);
    for seed in 0..200 {
        let mut rng = seeding::rng(seed, &[seeding::TAG_BUFFER]);
        let pose = find_buffer_pose(&s, 0, 0.01, 1000, &mut rng).unwrap();
        assert!(!check_collision(&s, 0, &pose, 0.01).unwrap());
        assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&pose.yaw));
    }
}

#[test]
fn buffer_pose_on_a_packed_table() {
    let mut placements = vec![];
    for i in 0..5 {
        for j in 0..5 {
            placements.push(disc(-0.4 + 0.2 * i as f64, -0.4 + 0.2 * j as f64, 0.0, 0.095));
        }
    }
    let s = scene(placements);
    let mut rng = seeding::rng(3, &[]);
    assert!(matches!(
        find_buffer_pose(&s, 12, 0.01, 1000, &mut rng),
        Err(PlannerError::NoBufferSpace { object: 12, attempts: 1000 })
    ));
}

#[test]
fn conflict_free_scene_takes_one_move_per_object() {
    for k in 1..=5 {
        let initial = scene((0..k).map(|i| disc(-0.35 + 0.17 * i as f64, -0.25, 0.0, 0.05)).collect());
        let goal = scene((0..k).map(|i| disc(-0.35 + 0.17 * i as f64, 0.25, 0.3 * i as f64, 0.05)).collect());
        let inst = instance(initial, goal);
        let result = plan_and_execute(&inst, &exact(&inst), &PlannerConfig::default(), None).unwrap();
        assert!(result.completed);
        assert_eq!(result.goal_moves, vec![1; k]);
        assert_eq!(result.buffer_moves, vec![0; k]);
        assert_eq!(result.manipulations(), k);
        assert_eq!(result.state.outer_iterations, 1);
        assert!(reached_goal(&result, &inst));
    }
}

fn swap() -> RearrangementInstance {
    let a = disc(-0.15, 0.0, 0.0, 0.05);
    let b = disc(0.15, 0.0, FRAC_PI_2, 0.05);
    instance(scene(vec![a, b]), scene(vec![b, a]))
}

#[test]
fn swap_needs_exactly_one_buffer_move() {
    let inst = swap();
    let result = plan_and_execute(&inst, &exact(&inst), &PlannerConfig::default(), None).unwrap();
    assert!(result.completed);
    assert_eq!(result.manipulations(), 3);
    assert_eq!(result.buffer_moves.iter().sum::<usize>(), 1);
    assert_eq!(result.goal_moves, vec![1, 1]);
    assert!(reached_goal(&result, &inst));
    // the first object fails past the threshold and is the one parked
    assert_eq!(result.buffer_moves, vec![1, 0]);
    let blocked = result.log.iter().filter(|r| r.kind == StepKind::Blocked).count();
    assert_eq!(blocked, 4 + 3);
}

#[test]
fn swap_has_no_direct_order() {
    let inst = swap();
    for first in 0..2 {
        let target = inst.true_offsets[first].compose(&inst.initial.placements[first].pose);
        assert!(check_collision(&inst.initial, first, &target, 0.01).unwrap());
    }
}

#[test]
fn finished_scene_needs_no_moves() {
    let s = scene(vec![disc(-0.2, 0.1, 0.4, 0.05), disc(0.2, -0.1, -2.0, 0.06)]);
    let inst = instance(s.clone(), s);
    let result = plan_and_execute(&inst, &exact(&inst), &PlannerConfig::default(), None).unwrap();
    assert!(result.completed);
    assert_eq!(result.manipulations(), 0);
    assert!(result.log.iter().all(|r| r.kind == StepKind::InPlace));
}

#[test]
fn rejected_estimates_accrue_failures_and_stop_the_loop() {
    let inst = swap();
    let mut estimates = exact(&inst);
    estimates[1].accepted = false;
    let result = plan_and_execute(&inst, &estimates, &PlannerConfig::default(), None).unwrap();
    assert!(!result.completed);
    assert_eq!(result.goal_moves[1], 0);
    assert_eq!(result.state.outer_iterations, 5);
    assert_eq!(result.state.failure_counts[1], 5);
}

#[test]
fn estimate_count_must_match() {
    let inst = swap();
    assert!(matches!(
        plan_and_execute(&inst, &exact(&inst)[..1], &PlannerConfig::default(), None),
        Err(PlannerError::EstimateCount { .. })
    ));
}

#[test]
fn generated_suite_completes_and_replays() {
    let base = SimConfig::default();
    let lib = generate_model_library(&base);
    let mut buffered = 0;
    for seed in 0..50 {
        let config = SimConfig { seed, ..base.clone() };
        let inst = generate_instance(&config, &lib).unwrap();
        let k = inst.object_count();
        let cfg = PlannerConfig::default();
        let result = plan_and_execute(&inst, &exact(&inst), &cfg, None).unwrap();
        assert!(result.completed, "seed {seed}");
        assert!(result.state.outer_iterations <= cfg.outer_limit(k) + 1, "seed {seed}");
        assert!(reached_goal(&result, &inst), "seed {seed}");
        assert!(result.goal_moves.iter().all(|&g| g <= 1));
        buffered += result.buffer_moves.iter().sum::<usize>();

        // every executed move was checked right before it ran
        for rec in result.log.iter().filter(|r| r.kind.is_manipulation()) {
            assert_eq!(rec.collision, Some(false));
        }
        assert_eq!(replay(&inst.initial, &result.log).unwrap(), result.final_scene);
        let again = plan_and_execute(&inst, &exact(&inst), &cfg, None).unwrap();
        assert_eq!(again, result);
    }
    // the generated suite does contain conflicts
    assert!(buffered > 0);
}

#[test]
fn reobservation_corrects_actuation_noise() {
    let config = SimConfig {
        seed: 4,
        min_objects: 3,
        max_objects: 3,
        ..SimConfig::default()
    };
    let lib = generate_model_library(&config);
    let inst = generate_instance(&config, &lib).unwrap();
    let intr = config.intrinsics().unwrap();
    let frames: Vec<_> = ring_viewpoints(&config)
        .iter()
        .enumerate()
        .filter_map(|(i, v)| render(&inst.initial, v, &intr, &lib, i as u32).ok())
        .collect();
    let perception = PerceptionConfig::default();
    let backend = perception.synthetic_backend(lib.len());
    let segmenter = SegmentationNoise::none();
    let db = build_database(&frames, &segmenter, &backend, &perception).unwrap();
    let instances: Vec<Option<usize>> = inst
        .initial
        .placements
        .iter()
        .map(|p| db.nearest_instance(&crate::geometry::Vec3::new(p.pose.tx, p.pose.ty, 0.0)))
        .collect();
    let matcher = OracleMatcher::default();
    let localization = LocalizationConfig::default();
    let observer = HomeViewObserver {
        library: &lib,
        database: &db,
        segmenter: &segmenter,
        backend: &backend,
        matcher: &matcher,
        perception: &perception,
        localization: &localization,
        home: inst.home_viewpoint,
        intrinsics: intr,
        instances,
    };

    let trials = 200;
    let mut good = 0;
    for trial in 0..trials {
        let object = trial % inst.object_count();
        // the object was put down at an intermediate spot with noise
        let mut rng = seeding::rng(trial as u64, &[seeding::TAG_ACTUATION]);
        let commanded = inst.initial.placements[object].pose;
        let Ok(moved) = apply_move(&inst.initial, object, &commanded, 0.005, &mut rng) else {
            continue;
        };
        let Ok(tracked) = observer.reobserve(&moved, object, &commanded) else {
            continue;
        };
        let correction = PlanarTransform::from_pose(&correct_pose(&inst.true_offsets[object], &tracked));
        let target = correction.compose(&moved.placements[object].pose);
        if planar_difference(&target, &inst.goal.placements[object].pose).within(5.0, 2.0) {
            good += 1;
        }
    }
    assert!(good * 100 >= 95 * trials, "{good} / {trials}");
}
