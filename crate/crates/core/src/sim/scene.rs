use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelLibrary, SimConfig, SimError};
use crate::geometry::{PlanarTransform, Pose3, Vec3};
use crate::seeding;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl TableBounds {
    pub fn centered(size_x: f64, size_y: f64) -> Self {
        Self {
            min_x: -size_x / 2.0,
            max_x: size_x / 2.0,
            min_y: -size_y / 2.0,
            max_y: size_y / 2.0,
        }
    }

    /// Whether a disc of `radius` centered at `(x, y)` lies on the table.
    pub fn contains_disc(&self, x: f64, y: f64, radius: f64) -> bool {
        x - radius >= self.min_x && x + radius <= self.max_x && y - radius >= self.min_y && y + radius <= self.max_y
    }

    fn sample_center<R: Rng>(&self, radius: f64, rng: &mut R) -> Option<(f64, f64)> {
        let (lx, hx) = (self.min_x + radius, self.max_x - radius);
        let (ly, hy) = (self.min_y + radius, self.max_y - radius);
        if lx > hx || ly > hy {
            return None;
        }
        Some((uniform(rng, lx, hx), uniform(rng, ly, hy)))
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub model_id: u32,
    pub pose: PlanarTransform,
    /// Footprint disc radius copied from the model.
    pub radius: f64,
}

/// One tabletop configuration. An object's index in `placements` is its
/// ground-truth instance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub table: TableBounds,
    pub placements: Vec<Placement>,
}

impl SceneState {
    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Whether object `index` placed at `target` (with its radius grown by
    /// `margin`) would overlap another object or leave the table.
    pub fn collides(&self, index: usize, target: &PlanarTransform, margin: f64) -> Result<bool, SimError> {
        let mover = self.placements.get(index).ok_or(SimError::UnknownObject(index))?;
        if !self.table.contains_disc(target.tx, target.ty, mover.radius) {
            return Ok(true);
        }
        Ok(self.placements.iter().enumerate().any(|(j, other)| {
            j != index
                && (target.tx - other.pose.tx).hypot(target.ty - other.pose.ty) < mover.radius + other.radius + margin
        }))
    }

    /// Smallest gap between any two footprint discs; infinite for fewer than
    /// two objects.
    pub fn min_clearance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.placements.iter().enumerate() {
            for b in &self.placements[i + 1..] {
                let d = (a.pose.tx - b.pose.tx).hypot(a.pose.ty - b.pose.ty) - a.radius - b.radius;
                best = best.min(d);
            }
        }
        best
    }

    pub fn all_on_table(&self) -> bool {
        self.placements
            .iter()
            .all(|p| self.table.contains_disc(p.pose.tx, p.pose.ty, p.radius))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RearrangementInstance {
    pub config: SimConfig,
    pub initial: SceneState,
    pub goal: SceneState,
    /// Per object: goal placement ∘ inverse(initial placement).
    pub true_offsets: Vec<PlanarTransform>,
    pub home_viewpoint: Pose3,
    pub ring_viewpoints: Vec<Pose3>,
}

impl RearrangementInstance {
    pub fn object_count(&self) -> usize {
        self.initial.len()
    }
}

/// Cameras evenly spaced in azimuth around the table center, all looking at
/// it.
pub fn ring_viewpoints(config: &SimConfig) -> Vec<Pose3> {
    let height = config.ring_radius * config.ring_elevation_deg.to_radians().tan();
    (0..config.ring_count)
        .map(|k| {
            let az = 2.0 * PI * k as f64 / config.ring_count as f64;
            let eye = Vec3::new(config.ring_radius * az.cos(), config.ring_radius * az.sin(), height);
            Pose3::look_at(eye, Vec3::zeros(), Vec3::z())
        })
        .collect()
}

pub fn home_viewpoint(config: &SimConfig) -> Pose3 {
    Pose3::look_at(Vec3::from(config.home_eye), Vec3::zeros(), Vec3::z())
}

/// Generates a goal scene by collision-free rejection sampling, then perturbs
/// every object by a collision-free planar motion to obtain the initial scene.
pub fn generate_instance(config: &SimConfig, library: &ModelLibrary) -> Result<RearrangementInstance, SimError> {
    config.validate()?;
    if library.is_empty() {
        return Err(SimError::EmptyLibrary);
    }
    let mut rng = seeding::rng(config.seed, &[seeding::TAG_SCENE]);
    let count = rng.random_range(config.min_objects..=config.max_objects);

    // distinct models while the library allows it
    let mut pool: Vec<u32> = library.models.iter().map(|m| m.model_id).collect();
    let mut models = Vec::with_capacity(count);
    for _ in 0..count {
        if pool.is_empty() {
            pool = library.models.iter().map(|m| m.model_id).collect();
        }
        let k = rng.random_range(0..pool.len());
        models.push(pool.swap_remove(k));
    }
    let radii: Vec<f64> = models
        .iter()
        .map(|&id| library.get(id).map(|m| m.footprint_radius).ok_or(SimError::UnknownModel(id)))
        .collect::<Result<_, _>>()?;

    let table = config.table();
    let mut attempts = 0usize;
    let goal = place_all(&table, &models, &radii, config.placement_clearance, &mut attempts, &mut rng, |rng| {
        rng.random_range(-PI..PI)
    })?;

    let max_yaw = config.rotation.max_abs_yaw();
    let mut initial_placements: Vec<Placement> = Vec::with_capacity(count);
    for (i, g) in goal.placements.iter().enumerate() {
        let delta_yaw = rng.random_range(-max_yaw..=max_yaw);
        let yaw = g.pose.yaw - delta_yaw;
        let (x, y) = sample_free(
            &table,
            radii[i],
            &initial_placements,
            config.placement_clearance,
            &mut attempts,
            count,
            &mut rng,
        )?;
        initial_placements.push(Placement {
            model_id: models[i],
            pose: PlanarTransform::new(yaw, x, y),
            radius: radii[i],
        });
    }
    let initial = SceneState {
        table,
        placements: initial_placements,
    };
    let true_offsets = goal
        .placements
        .iter()
        .zip(&initial.placements)
        .map(|(g, s)| g.pose.compose(&s.pose.inverse()))
        .collect();

    Ok(RearrangementInstance {
        config: config.clone(),
        initial,
        goal,
        true_offsets,
        home_viewpoint: home_viewpoint(config),
        ring_viewpoints: ring_viewpoints(config),
    })
}

fn place_all<R: Rng>(
    table: &TableBounds,
    models: &[u32],
    radii: &[f64],
    clearance: f64,
    attempts: &mut usize,
    rng: &mut R,
    mut yaw: impl FnMut(&mut R) -> f64,
) -> Result<SceneState, SimError> {
    let mut placements: Vec<Placement> = Vec::with_capacity(models.len());
    for (&model_id, &radius) in models.iter().zip(radii) {
        let (x, y) = sample_free(table, radius, &placements, clearance, attempts, models.len(), rng)?;
        placements.push(Placement {
            model_id,
            pose: PlanarTransform::new(yaw(rng), x, y),
            radius,
        });
    }
    Ok(SceneState {
        table: *table,
        placements,
    })
}

fn sample_free<R: Rng>(
    table: &TableBounds,
    radius: f64,
    placed: &[Placement],
    clearance: f64,
    attempts: &mut usize,
    objects: usize,
    rng: &mut R,
) -> Result<(f64, f64), SimError> {
    loop {
        *attempts += 1;
        if *attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(SimError::PlacementFailure {
                objects,
                attempts: *attempts - 1,
            });
        }
        let Some((x, y)) = table.sample_center(radius, rng) else {
            return Err(SimError::PlacementFailure {
                objects,
                attempts: *attempts,
            });
        };
        let free = placed
            .iter()
            .all(|p| (x - p.pose.tx).hypot(y - p.pose.ty) >= radius + p.radius + clearance);
        if free {
            return Ok((x, y));
        }
    }
}

/// Abstract pick-and-place: moves object `index` to `target`, perturbed by
/// zero-mean Gaussian noise of standard deviation `sigma` in yaw, x and y.
pub fn apply_move<R: Rng>(
    scene: &SceneState,
    index: usize,
    target: &PlanarTransform,
    sigma: f64,
    rng: &mut R,
) -> Result<SceneState, SimError> {
    if scene.collides(index, target, 0.0)? {
        return Err(SimError::CollisionAtTarget(index));
    }
    let mut next = scene.clone();
    let pose = if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma is positive");
        PlanarTransform::new(
            target.yaw + n.sample(rng),
            target.tx + n.sample(rng),
            target.ty + n.sample(rng),
        )
    } else {
        *target
    };
    next.placements[index].pose = pose;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, CameraIntrinsics};
    use crate::sim::generate_model_library;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (SimConfig, ModelLibrary) {
        let config = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let lib = generate_model_library(&config);
        (config, lib)
    }

    #[test]
    fn instance_is_deterministic() {
        let (config, lib) = setup(11);
        assert_eq!(generate_instance(&config, &lib).unwrap(), generate_instance(&config, &lib).unwrap());
    }

    #[test]
    fn generated_scenes_are_collision_free_and_consistent() {
        for seed in 0..40 {
            let (config, lib) = setup(seed);
            let inst = generate_instance(&config, &lib).unwrap();
            let n = inst.object_count();
            assert!((config.min_objects..=config.max_objects).contains(&n));
            for scene in [&inst.initial, &inst.goal] {
                assert!(scene.min_clearance() >= config.placement_clearance - 1e-12);
                assert!(scene.all_on_table());
            }
            for i in 0..n {
                assert_eq!(inst.initial.placements[i].model_id, inst.goal.placements[i].model_id);
                let lhs = inst.goal.placements[i].pose.lift();
                let rhs = inst.true_offsets[i].lift().compose(&inst.initial.placements[i].pose.lift());
                assert!((lhs.rotation - rhs.rotation).amax() < 1e-12);
                assert!((lhs.translation - rhs.translation).amax() < 1e-12);
                assert!(inst.true_offsets[i].yaw.abs() <= config.rotation.max_abs_yaw() + 1e-12);
            }
        }
    }

    #[test]
    fn minor_regime_bounds_relative_yaw() {
        let (mut config, lib) = setup(3);
        config.rotation = crate::sim::RotationRegime::Minor;
        for seed in 0..20 {
            config.seed = seed;
            let inst = generate_instance(&config, &lib).unwrap();
            assert!(inst.true_offsets.iter().all(|t| t.yaw.abs() <= 60f64.to_radians() + 1e-12));
        }
    }

    #[test]
    fn nine_small_objects_fit() {
        let (mut config, lib) = setup(5);
        config.min_objects = 9;
        for seed in 0..20 {
            config.seed = seed;
            let inst = generate_instance(&config, &lib).unwrap();
            assert_eq!(inst.object_count(), 9);
            assert!(inst.initial.placements.iter().all(|p| p.radius <= 0.08));
        }
    }

    #[test]
    fn oversized_objects_fail_placement() {
        let (mut config, mut lib) = setup(5);
        config.min_objects = 9;
        for m in &mut lib.models {
            m.footprint_radius = 0.5;
        }
        let err = generate_instance(&config, &lib).unwrap_err();
        assert!(matches!(err, SimError::PlacementFailure { .. }));
    }

    #[test]
    fn viewpoints_cover_the_table() {
        let config = SimConfig::default();
        let intr = CameraIntrinsics::centered(config.focal_px, config.image_width, config.image_height).unwrap();
        let ring = ring_viewpoints(&config);
        let home = home_viewpoint(&config);
        // inset by the smallest footprint an object can have
        let t = config.table();
        let inset = 0.025;
        let sees = |view: &Pose3, x: f64, y: f64, z: f64| {
            project(&intr, &view.inverse(), &Vec3::new(x, y, z))
                .map(|p| intr.contains(p.u, p.v))
                .unwrap_or(false)
        };
        for x in [t.min_x + inset, 0.0, t.max_x - inset] {
            for y in [t.min_y + inset, 0.0, t.max_y - inset] {
                for z in [0.0, 0.12] {
                    assert!(sees(&home, x, y, z), "home misses ({x},{y},{z})");
                    // axis-aligned ring cameras frame the whole table
                    for k in [0, 2, 4, 6] {
                        assert!(sees(&ring[k], x, y, z), "ring {k} misses ({x},{y},{z})");
                    }
                    let count = ring.iter().filter(|v| sees(v, x, y, z)).count();
                    assert!(count >= 6, "({x},{y},{z}) seen by {count} ring views");
                }
            }
        }
    }

    #[test]
    fn apply_move_noiseless_collision_and_noise() {
        let (mut config, lib) = setup(8);
        config.min_objects = 3;
        config.max_objects = 3;
        let inst = generate_instance(&config, &lib).unwrap();
        let scene = &inst.initial;
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let target = inst.goal.placements[0].pose;
        let mut free_scene = scene.clone();
        free_scene.placements.truncate(1);
        let moved = apply_move(&free_scene, 0, &target, 0.0, &mut rng).unwrap();
        assert_eq!(moved.placements[0].pose, target);

        let onto = scene.placements[1].pose;
        assert!(matches!(apply_move(scene, 0, &onto, 0.0, &mut rng), Err(SimError::CollisionAtTarget(0))));

        let sigma = 0.01;
        let mut within = 0;
        for _ in 0..1000 {
            let m = apply_move(&free_scene, 0, &target, sigma, &mut rng).unwrap();
            let p = m.placements[0].pose;
            let dyaw = crate::geometry::wrap_angle(p.yaw - target.yaw).abs();
            if dyaw <= 4.0 * sigma && (p.tx - target.tx).abs() <= 4.0 * sigma && (p.ty - target.ty).abs() <= 4.0 * sigma {
                within += 1;
            }
        }
        assert!(within >= 995, "{within}/1000 within 4 sigma");
    }
}
