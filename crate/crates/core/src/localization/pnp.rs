//! Perspective-n-point: EPnP for general point sets, a homography solver for
//! (near-)planar ones, Levenberg-Marquardt refinement and a seeded RANSAC
//! loop around them. Poses here are world-to-camera extrinsics.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, SymmetricEigen, Vector6};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::LocalizationError;
use crate::geometry::{CameraIntrinsics, Mat3, PlanarTransform, Pose3, Vec3, MIN_DEPTH};
use crate::seeding;

/// Ratio of the smallest to the largest principal spread below which a
/// point set is handled by the planar solver.
const PLANAR_THINNESS: f64 = 0.05;
/// Ratio of the middle to the largest principal spread below which a
/// point set is treated as collinear.
const COLLINEAR_THINNESS: f64 = 1e-3;
/// Refinement steps applied to every direct solve.
const MINIMAL_REFINE_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold on reprojection error, pixels.
    pub threshold_px: f64,
    /// Early-exit confidence that an all-inlier sample has been drawn.
    pub confidence: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            threshold_px: 2.0,
            confidence: 0.999,
            min_inliers: 12,
            min_inlier_ratio: 0.3,
            refine_iterations: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub world_to_cam: Pose3,
    /// Indices of correspondences within the threshold under the final pose.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

fn pixel_to_normalized(intr: &CameraIntrinsics, px: &[f64; 2]) -> (f64, f64) {
    ((px[0] - intr.cx) / intr.fx, (px[1] - intr.cy) / intr.fy)
}

/// Per-correspondence reprojection error in pixels; infinite for points
/// that land behind the camera.
pub fn reprojection_errors(pose: &Pose3, world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics) -> Vec<f64> {
    world
        .iter()
        .zip(pixels)
        .map(|(p, px)| {
            let pc = pose.transform_point(p);
            if pc.z <= MIN_DEPTH {
                return f64::INFINITY;
            }
            let u = intr.fx * pc.x / pc.z + intr.cx;
            let v = intr.fy * pc.y / pc.z + intr.cy;
            (u - px[0]).hypot(v - px[1])
        })
        .collect()
}

fn mean_error(pose: &Pose3, world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics) -> f64 {
    let e = reprojection_errors(pose, world, pixels, intr);
    e.iter().sum::<f64>() / e.len() as f64
}

/// Principal axes (columns, descending spread) and standard deviations.
fn principal_axes(points: &[Vec3]) -> (Vec3, Mat3, [f64; 3]) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = Mat3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    let sd = order.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
    (c, axes, sd)
}

/// Rotation and translation with `dst ≈ R src + t` in the least-squares sense.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Pose3 {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let r = nearest_rotation(&h);
    Pose3::new(r, cd - r * cs)
}

fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt
}

/// EPnP with four control points on the principal axes of the world points.
/// Needs at least four points that are not coplanar.
pub fn epnp(world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics) -> Option<Pose3> {
    let n = world.len();
    if n < 4 {
        return None;
    }
    let (c0, axes, sd) = principal_axes(world);
    if !(sd[2] > 0.0) || sd[2] / sd[0] < 1e-6 {
        return None;
    }
    let ctrl = [c0, c0 + axes.column(0) * sd[0], c0 + axes.column(1) * sd[1], c0 + axes.column(2) * sd[2]];
    let basis = Mat3::from_columns(&[ctrl[1] - c0, ctrl[2] - c0, ctrl[3] - c0]);
    let inv = basis.try_inverse()?;
    let alphas: Vec<[f64; 4]> = world
        .iter()
        .map(|p| {
            let a = inv * (p - c0);
            [1.0 - a.x - a.y - a.z, a.x, a.y, a.z]
        })
        .collect();

    let mut m = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (a, px)) in alphas.iter().zip(pixels).enumerate() {
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j] * intr.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (intr.cx - px[0]);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * intr.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (intr.cy - px[1]);
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v: Vec<DVector<f64>> = order[..4].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut l = SMatrix::<f64, 6, 10>::zeros();
    let mut rho = SMatrix::<f64, 6, 1>::zeros();
    for (r, &(a, b)) in PAIRS.iter().enumerate() {
        let dv: Vec<Vec3> = v
            .iter()
            .map(|vi| {
                Vec3::new(vi[3 * a] - vi[3 * b], vi[3 * a + 1] - vi[3 * b + 1], vi[3 * a + 2] - vi[3 * b + 2])
            })
            .collect();
        let row = [
            dv[0].dot(&dv[0]),
            2.0 * dv[0].dot(&dv[1]),
            dv[1].dot(&dv[1]),
            2.0 * dv[0].dot(&dv[2]),
            2.0 * dv[1].dot(&dv[2]),
            dv[2].dot(&dv[2]),
            2.0 * dv[0].dot(&dv[3]),
            2.0 * dv[1].dot(&dv[3]),
            2.0 * dv[2].dot(&dv[3]),
            dv[3].dot(&dv[3]),
        ];
        for (c, x) in row.iter().enumerate() {
            l[(r, c)] = *x;
        }
        rho[r] = (ctrl[a] - ctrl[b]).norm_squared();
    }

    let solve_cols = |cols: &[usize]| -> Option<DVector<f64>> {
        let sub = DMatrix::from_fn(6, cols.len(), |r, c| l[(r, cols[c])]);
        let rhs = DVector::from_iterator(6, rho.iter().copied());
        sub.svd(true, true).solve(&rhs, 1e-14).ok()
    };

    let mut candidates: Vec<[f64; 4]> = Vec::new();
    if let Some(b) = solve_cols(&[0, 1, 3, 6]) {
        let b0 = b[0].abs().sqrt();
        if b0 > 0.0 {
            let s = if b[0] < 0.0 { -1.0 } else { 1.0 };
            candidates.push([b0, s * b[1] / b0, s * b[2] / b0, s * b[3] / b0]);
        }
    }
    if let Some(b) = solve_cols(&[0, 1, 2]) {
        candidates.push(two_betas(b[0], b[1], b[2], None));
    }
    if let Some(b) = solve_cols(&[0, 1, 2, 3, 4]) {
        candidates.push(two_betas(b[0], b[1], b[2], Some(b[3])));
    }

    let mut best: Option<(f64, Pose3)> = None;
    for betas in candidates {
        let betas = refine_betas(&l, &rho, betas);
        let Some(pose) = pose_from_betas(&v, &betas, &alphas, world) else {
            continue;
        };
        let err = mean_error(&pose, world, pixels, intr);
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p)
}

fn two_betas(b00: f64, b01: f64, b11: f64, b02: Option<f64>) -> [f64; 4] {
    let (mut beta0, beta1);
    if b00 < 0.0 {
        beta0 = (-b00).sqrt();
        beta1 = if b11 < 0.0 { (-b11).sqrt() } else { 0.0 };
    } else {
        beta0 = b00.sqrt();
        beta1 = if b11 > 0.0 { b11.sqrt() } else { 0.0 };
    }
    if b01 < 0.0 {
        beta0 = -beta0;
    }
    let beta2 = match b02 {
        Some(b) if beta0 != 0.0 => b / beta0,
        _ => 0.0,
    };
    [beta0, beta1, beta2, 0.0]
}

fn refine_betas(l: &SMatrix<f64, 6, 10>, rho: &SMatrix<f64, 6, 1>, mut b: [f64; 4]) -> [f64; 4] {
    for _ in 0..10 {
        let mut a = SMatrix::<f64, 6, 4>::zeros();
        let mut r = SMatrix::<f64, 6, 1>::zeros();
        for i in 0..6 {
            let li = |k: usize| l[(i, k)];
            a[(i, 0)] = 2.0 * li(0) * b[0] + li(1) * b[1] + li(3) * b[2] + li(6) * b[3];
            a[(i, 1)] = li(1) * b[0] + 2.0 * li(2) * b[1] + li(4) * b[2] + li(7) * b[3];
            a[(i, 2)] = li(3) * b[0] + li(4) * b[1] + 2.0 * li(5) * b[2] + li(8) * b[3];
            a[(i, 3)] = li(6) * b[0] + li(7) * b[1] + li(8) * b[2] + 2.0 * li(9) * b[3];
            let model = li(0) * b[0] * b[0]
                + li(1) * b[0] * b[1]
                + li(2) * b[1] * b[1]
                + li(3) * b[0] * b[2]
                + li(4) * b[1] * b[2]
                + li(5) * b[2] * b[2]
                + li(6) * b[0] * b[3]
                + li(7) * b[1] * b[3]
                + li(8) * b[2] * b[3]
                + li(9) * b[3] * b[3];
            r[i] = rho[i] - model;
        }
        let Ok(dx) = a.svd(true, true).solve(&r, 1e-14) else {
            break;
        };
        for k in 0..4 {
            b[k] += dx[k];
        }
    }
    b
}

fn pose_from_betas(v: &[DVector<f64>], betas: &[f64; 4], alphas: &[[f64; 4]], world: &[Vec3]) -> Option<Pose3> {
    let ctrl_cam: Vec<Vec3> = (0..4)
        .map(|j| {
            (0..4).fold(Vec3::zeros(), |acc, i| {
                acc + Vec3::new(v[i][3 * j], v[i][3 * j + 1], v[i][3 * j + 2]) * betas[i]
            })
        })
        .collect();
    let mut cam: Vec<Vec3> = alphas
        .iter()
        .map(|a| (0..4).fold(Vec3::zeros(), |acc, j| acc + ctrl_cam[j] * a[j]))
        .collect();
    let negative = cam.iter().filter(|p| p.z < 0.0).count();
    if 2 * negative > cam.len() {
        cam.iter_mut().for_each(|p| *p = -*p);
    }
    let pose = kabsch(world, &cam);
    pose.rotation.iter().all(|x| x.is_finite()).then_some(pose)
}

/// Pose from points that lie close to a plane, via a normalized DLT
/// homography between plane coordinates and normalized image coordinates.
pub fn planar_pnp(world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics) -> Option<Pose3> {
    let n = world.len();
    if n < 4 {
        return None;
    }
    let (c, mut axes, _) = principal_axes(world);
    if axes.determinant() < 0.0 {
        axes.set_column(2, &-axes.column(2));
    }
    let plane: Vec<(f64, f64)> = world
        .iter()
        .map(|p| {
            let q = axes.transpose() * (p - c);
            (q.x, q.y)
        })
        .collect();
    let image: Vec<(f64, f64)> = pixels.iter().map(|px| pixel_to_normalized(intr, px)).collect();
    let (tp, plane_n) = normalize_2d(&plane)?;
    let (ti, image_n) = normalize_2d(&image)?;

    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (&(x, y), &(u, v)) in plane_n.iter().zip(&image_n) {
        let r1 = SMatrix::<f64, 9, 1>::from_column_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
        let r2 = SMatrix::<f64, 9, 1>::from_column_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]);
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let k = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(k);
    let hn = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let hmat = ti.try_inverse()? * hn * tp;

    let (h1, h2, h3) = (hmat.column(0).into_owned(), hmat.column(1).into_owned(), hmat.column(2).into_owned());
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if !scale.is_finite() {
        return None;
    }
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let (r1, r2, t) = (h1 * scale, h2 * scale, h3 * scale);
    let r = nearest_rotation(&Mat3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let rot = r * axes.transpose();
    Some(Pose3::new(rot, t - rot * c))
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalize_2d(pts: &[(f64, f64)]) -> Option<(Mat3, Vec<(f64, f64)>)> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = pts.iter().map(|p| (p.0 - mx).hypot(p.1 - my)).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Mat3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    Some((t, pts.iter().map(|p| (s * (p.0 - mx), s * (p.1 - my))).collect()))
}

/// Chooses the solver from the shape of the point set. `None` for
/// collinear or otherwise unsolvable inputs.
pub fn solve_pnp(world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics) -> Option<Pose3> {
    if world.len() < 4 {
        return None;
    }
    let (_, _, sd) = principal_axes(world);
    if !(sd[0] > 0.0) || sd[1] / sd[0] < COLLINEAR_THINNESS {
        return None;
    }
    let general = (sd[2] / sd[0] >= PLANAR_THINNESS).then(|| epnp(world, pixels, intr)).flatten();
    [general, planar_pnp(world, pixels, intr)]
        .into_iter()
        .flatten()
        .map(|p| refine_pose(&p, world, pixels, intr, MINIMAL_REFINE_ITERATIONS))
        .map(|p| (mean_error(&p, world, pixels, intr), p))
        .filter(|(e, _)| e.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
}

/// Levenberg-Marquardt on the 6-dof reprojection error with a left
/// rotation update.
pub fn refine_pose(
    pose: &Pose3,
    world: &[Vec3],
    pixels: &[[f64; 2]],
    intr: &CameraIntrinsics,
    max_iterations: usize,
) -> Pose3 {
    let cost = |p: &Pose3| -> f64 {
        reprojection_errors(p, world, pixels, intr).iter().map(|e| e * e).sum()
    };
    let mut current = *pose;
    let mut current_cost = cost(&current);
    let mut lambda = 1e-3;
    for _ in 0..max_iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, px) in world.iter().zip(pixels) {
            let pc = current.transform_point(p);
            if pc.z <= MIN_DEPTH {
                continue;
            }
            let iz = 1.0 / pc.z;
            let u = intr.fx * pc.x * iz + intr.cx;
            let v = intr.fy * pc.y * iz + intr.cy;
            let dproj = SMatrix::<f64, 2, 3>::new(
                intr.fx * iz,
                0.0,
                -intr.fx * pc.x * iz * iz,
                0.0,
                intr.fy * iz,
                -intr.fy * pc.y * iz * iz,
            );
            // d(pc)/d(omega) = -[pc]x, d(pc)/d(t) = I
            let skew = Mat3::new(0.0, -pc.z, pc.y, pc.z, 0.0, -pc.x, -pc.y, pc.x, 0.0);
            let mut j = SMatrix::<f64, 2, 6>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            let r = nalgebra::Vector2::new(u - px[0], v - px[1]);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vec3::new(step[0], step[1], step[2]);
            let dt = Vec3::new(step[3], step[4], step[5]);
            let rot = Pose3::exp_rotation(&omega);
            let candidate = Pose3::new(rot * current.rotation, rot * current.translation + dt);
            let c = cost(&candidate);
            if c <= current_cost {
                let converged = step.norm() < 1e-14 || current_cost - c <= 1e-16 * current_cost.max(1e-300);
                current = candidate;
                current_cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current.rotation = nearest_rotation(&current.rotation);
    current
}

/// Gauss-Newton over a planar motion `T` (yaw, tx, ty) of the scene points,
/// observed through fixed extrinsics `inverse(view)`.
pub fn refine_planar(
    start: &PlanarTransform,
    view: &Pose3,
    world: &[Vec3],
    pixels: &[[f64; 2]],
    intr: &CameraIntrinsics,
    max_iterations: usize,
) -> PlanarTransform {
    let w = view.inverse();
    let cost = |t: &PlanarTransform| -> f64 {
        let pose = w.compose(&t.lift());
        reprojection_errors(&pose, world, pixels, intr).iter().map(|e| e * e).sum()
    };
    let mut current = *start;
    let mut current_cost = cost(&current);
    let mut lambda = 1e-3;
    for _ in 0..max_iterations {
        let lifted = current.lift();
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vec3::zeros();
        for (p, px) in world.iter().zip(pixels) {
            let g = lifted.transform_point(p);
            let pc = w.transform_point(&g);
            if pc.z <= MIN_DEPTH {
                continue;
            }
            let iz = 1.0 / pc.z;
            let dproj = SMatrix::<f64, 2, 3>::new(
                intr.fx * iz,
                0.0,
                -intr.fx * pc.x * iz * iz,
                0.0,
                intr.fy * iz,
                -intr.fy * pc.y * iz * iz,
            );
            let arm = g - lifted.translation;
            let dg = Matrix3::from_columns(&[Vec3::new(-arm.y, arm.x, 0.0), Vec3::x(), Vec3::y()]);
            let j = dproj * w.rotation * dg;
            let r = nalgebra::Vector2::new(
                intr.fx * pc.x * iz + intr.cx - px[0],
                intr.fy * pc.y * iz + intr.cy - px[1],
            );
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = PlanarTransform::new(current.yaw + step.x, current.tx + step.y, current.ty + step.z);
            let c = cost(&candidate);
            if c <= current_cost {
                let converged = step.norm() < 1e-15 || current_cost - c <= 1e-16 * current_cost.max(1e-300);
                current = candidate;
                current_cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current
}

pub fn inliers_of(pose: &Pose3, world: &[Vec3], pixels: &[[f64; 2]], intr: &CameraIntrinsics, threshold: f64) -> Vec<usize> {
    reprojection_errors(pose, world, pixels, intr)
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn subset<T: Copy>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i]).collect()
}

/// Seeded RANSAC over minimal 4-point solves followed by refitting on the
/// consensus set and refinement.
pub fn ransac_pnp(
    world: &[Vec3],
    pixels: &[[f64; 2]],
    intr: &CameraIntrinsics,
    config: &RansacConfig,
    stream: u64,
) -> Result<RansacOutcome, LocalizationError> {
    let n = world.len();
    if n < 4 {
        return Err(LocalizationError::TooFewCorrespondences(n));
    }
    let mut rng = seeding::rng(config.seed, &[seeding::TAG_RANSAC, stream]);
    let mut best: Option<(Pose3, usize)> = None;
    let mut required = config.max_iterations;
    let mut iterations = 0;
    while iterations < required.min(config.max_iterations) {
        iterations += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let Some(pose) = solve_pnp(&subset(world, &idx), &subset(pixels, &idx), intr) else {
            continue;
        };
        let count = inliers_of(&pose, world, pixels, intr, config.threshold_px).len();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((pose, count));
            let w = count as f64 / n as f64;
            let miss = 1.0 - w.powi(4);
            required = if miss <= 0.0 {
                0
            } else if miss >= 1.0 {
                config.max_iterations
            } else {
                ((1.0 - config.confidence).ln() / miss.ln()).ceil().max(1.0) as usize
            };
        }
    }
    let Some((mut pose, _)) = best else {
        return Err(LocalizationError::DegenerateGeometry);
    };

    let mut inliers = inliers_of(&pose, world, pixels, intr, config.threshold_px);
    for _ in 0..2 {
        if inliers.len() < 4 {
            break;
        }
        let (w_in, p_in) = (subset(world, &inliers), subset(pixels, &inliers));
        let mut refit = solve_pnp(&w_in, &p_in, intr).unwrap_or(pose);
        if mean_error(&pose, &w_in, &p_in, intr) < mean_error(&refit, &w_in, &p_in, intr) {
            refit = pose;
        }
        let refined = refine_pose(&refit, &w_in, &p_in, intr, config.refine_iterations);
        let next = inliers_of(&refined, world, pixels, intr, config.threshold_px);
        if next.len() < inliers.len() {
            break;
        }
        let grew = next.len() > inliers.len();
        pose = refined;
        inliers = next;
        if !grew {
            break;
        }
    }
    Ok(RansacOutcome {
        world_to_cam: pose,
        inliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, PlanarTransform};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(450.0, 640, 480).unwrap()
    }

    fn camera() -> Pose3 {
        Pose3::look_at(Vec3::new(0.1, -0.85, 0.95), Vec3::zeros(), Vec3::z())
    }

    fn object_points(rng: &mut ChaCha8Rng, n: usize, planar: bool) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let z = if planar { 0.06 } else { rng.random_range(0.0..0.1) };
                Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), z)
            })
            .collect()
    }

    fn pixels_of(pose: &Pose3, pts: &[Vec3]) -> Vec<[f64; 2]> {
        pts.iter()
            .map(|p| {
                let q = project(&intr(), pose, p).unwrap();
                [q.u, q.v]
            })
            .collect()
    }

    fn assert_close(a: &Pose3, b: &Pose3, tol: f64) {
        assert!(a.rotation_angle_to(b) < tol, "rotation {}", a.rotation_angle_to(b));
        assert!((a.translation - b.translation).norm() < tol, "translation {}", (a.translation - b.translation).norm());
    }

    #[test]
    fn epnp_exact_general_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [6, 20, 200] {
            let pts = object_points(&mut rng, n, false);
            let truth = camera().inverse();
            let est = epnp(&pts, &pixels_of(&truth, &pts), &intr()).unwrap();
            assert_close(&est, &truth, 1e-6);
        }
        // four points: the linearized betas are only a starting point, and
        // the refinement can settle in another minimum
        let exact = (0..200)
            .filter(|_| {
                let pts = object_points(&mut rng, 4, false);
                let truth = camera().inverse();
                solve_pnp(&pts, &pixels_of(&truth, &pts), &intr())
                    .is_some_and(|est| est.rotation_angle_to(&truth) < 1e-6)
            })
            .count();
        assert!(exact >= 150, "{exact} of 200 minimal solves exact");
    }

    #[test]
    fn planar_solver_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [4, 5, 50] {
            let pts = object_points(&mut rng, n, true);
            let truth = camera().inverse();
            let est = planar_pnp(&pts, &pixels_of(&truth, &pts), &intr()).unwrap();
            assert_close(&est, &truth, 1e-6);
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.05)).collect();
        let px = pixels_of(&camera().inverse(), &pts);
        assert!(solve_pnp(&pts, &px, &intr()).is_none());
        assert!(matches!(
            ransac_pnp(&pts, &px, &intr(), &RansacConfig::default(), 0),
            Err(LocalizationError::DegenerateGeometry)
        ));
        assert!(matches!(
            ransac_pnp(&pts[..3], &px[..3], &intr(), &RansacConfig::default(), 0),
            Err(LocalizationError::TooFewCorrespondences(3))
        ));
    }

    #[test]
    fn refinement_recovers_from_a_perturbed_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = object_points(&mut rng, 60, false);
        let truth = camera().inverse();
        let px = pixels_of(&truth, &pts);
        let start = Pose3::new(
            Pose3::exp_rotation(&Vec3::new(0.02, -0.03, 0.01)) * truth.rotation,
            truth.translation + Vec3::new(0.01, -0.01, 0.02),
        );
        let refined = refine_pose(&start, &pts, &px, &intr(), 20);
        assert_close(&refined, &truth, 1e-9);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = object_points(&mut rng, 100, false);
        let truth = camera().inverse();
        let mut px = pixels_of(&truth, &pts);
        for p in px.iter_mut().take(40) {
            *p = [rng.random_range(250.0..390.0), rng.random_range(170.0..310.0)];
        }
        let out = ransac_pnp(&pts, &px, &intr(), &RansacConfig::default(), 0).unwrap();
        assert_close(&out.world_to_cam, &truth, 1e-6);
        assert!(out.inliers.len() >= 60);
        let errs = reprojection_errors(&out.world_to_cam, &pts, &px, &intr());
        assert!(out.inliers.iter().all(|&i| errs[i] <= 2.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn planar_motion_recovered_exactly(
            seed in 0u64..10_000,
            yaw in -3.1f64..3.1,
            tx in -0.3f64..0.3,
            ty in -0.3f64..0.3,
            n in 6usize..40,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = object_points(&mut rng, n, false);
            let motion = PlanarTransform::new(yaw, tx, ty).lift();
            let truth = camera().inverse().compose(&motion);
            let px = pixels_of(&truth, &pts);
            let out = ransac_pnp(&pts, &px, &intr(), &RansacConfig::default(), seed).unwrap();
            prop_assert!(out.world_to_cam.rotation_angle_to(&truth) < 1e-6);
            prop_assert!((out.world_to_cam.translation - truth.translation).norm() < 1e-6);
            prop_assert_eq!(out.inliers.len(), n);
        }
    }
}
