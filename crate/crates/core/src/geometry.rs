//! Rigid-body, pinhole camera and viewing-direction math shared by every
//! other module.
//!
//! Conventions used throughout the crate:
//!
//! * The world frame has its z axis along the table normal; the table top is
//!   the plane `z = 0`.
//! * Camera frames follow the computer-vision convention: x right, y down,
//!   z along the optical axis.
//! * A viewpoint pose is camera-in-world. The matching extrinsics that map
//!   world points into the camera frame are `viewpoint.inverse()`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Distance below which a viewpoint is considered to coincide with a cloud
/// centroid.
pub const MIN_OBSERVATION_DISTANCE: f64 = 1e-6;

/// Camera-frame depth below which a point is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("viewpoint coincides with the cloud centroid (distance {0:.3e} m)")]
    DegenerateObservation(f64),
    #[error("point lies behind the camera (depth {0:.3e} m)")]
    BehindCamera(f64),
    #[error("estimate is not planar: out-of-plane rotation {tilt_deg:.2} deg, vertical offset {vertical_m:.4} m")]
    NonPlanarEstimate { tilt_deg: f64, vertical_m: f64 },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud contains a non-finite coordinate")]
    NonFinitePoint,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("vector is not unit norm (norm {0})")]
    NotUnit(f64),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the other boundary.
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Rigid transform in SE(3): `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    /// Rotation of `yaw` radians about the world z axis followed by a
    /// translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vec3) -> Self {
        Self::new(rotz(yaw), translation)
    }

    /// Builds a camera-in-world pose at `eye` whose optical axis points at
    /// `target`. `up` is the world direction that should appear upward in the
    /// image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-12 {
            // looking straight along `up`: pick any perpendicular axis
            x = z.cross(&Vec3::x());
            if x.norm() < 1e-12 {
                x = z.cross(&Vec3::y());
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Mat3::from_columns(&[x, y, z]), eye)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rotation.transpose();
        Pose3::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Pose3 {
        let rotation = Mat3::from_fn(|r, c| rows[r][c]);
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        Pose3::new(rotation, translation)
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.rotation.transpose() * self.rotation - Mat3::identity();
        rtr.amax().max((self.rotation.determinant() - 1.0).abs())
    }

    /// Rotation angle of `self⁻¹ ∘ other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose3) -> f64 {
        let d = self.rotation.transpose() * other.rotation;
        let c = ((d.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near zero; use the skew part there.
        let s = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm() * 0.5;
        s.atan2(c)
    }

    /// Yaw of the rotation's projection onto the table plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Angle between the rotated z axis and the world z axis, in radians.
    pub fn tilt(&self) -> f64 {
        self.rotation[(2, 2)].clamp(-1.0, 1.0).acos()
    }

    /// Exponential map of a rotation vector.
    pub fn exp_rotation(omega: &Vec3) -> Mat3 {
        let angle = omega.norm();
        if angle < 1e-300 {
            return Mat3::identity();
        }
        Rotation3::from_axis_angle(&Unit::new_normalize(*omega), angle).into_inner()
    }
}

pub fn rotz(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Motion in the table plane: rotation about the table normal followed by a
/// horizontal translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for PlanarTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl PlanarTransform {
    pub fn new(yaw: f64, tx: f64, ty: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            tx,
            ty,
        }
    }

    pub fn identity() -> Self {
        Self {
            yaw: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn lift(&self) -> Pose3 {
        Pose3::from_yaw_translation(self.yaw, Vec3::new(self.tx, self.ty, 0.0))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &PlanarTransform) -> PlanarTransform {
        let (s, c) = self.yaw.sin_cos();
        PlanarTransform::new(
            self.yaw + other.yaw,
            c * other.tx - s * other.ty + self.tx,
            s * other.tx + c * other.ty + self.ty,
        )
    }

    pub fn inverse(&self) -> PlanarTransform {
        let (s, c) = self.yaw.sin_cos();
        PlanarTransform::new(-self.yaw, -(c * self.tx + s * self.ty), s * self.tx - c * self.ty)
    }

    /// Projects a pose onto the table plane, discarding tilt and height.
    pub fn from_pose(pose: &Pose3) -> PlanarTransform {
        PlanarTransform::new(pose.yaw(), pose.translation.x, pose.translation.y)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.tx, self.ty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels, principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside a {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    pub fn new(v: Vec3) -> Result<Self, GeometryError> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self(v / n))
    }

    /// Accepts `v` as-is if it is already unit norm to 1e-9.
    pub fn from_unit(v: Vec3) -> Result<Self, GeometryError> {
        let n = v.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self(v))
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    /// Azimuth about the z axis, via the two-argument arctangent. Zero at
    /// the poles.
    pub fn azimuth(&self) -> f64 {
        // adding 0.0 turns -0.0 into +0.0 so the poles do not map to -pi
        (self.0.y + 0.0).atan2(self.0.x + 0.0)
    }

    /// Polar angle from +z.
    pub fn polar(&self) -> f64 {
        self.0.z.clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinitePoint);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len() as f64
    }
}

/// Unit vector from the cloud centroid toward the viewpoint position.
pub fn observation_vector(viewpoint: &Pose3, cloud: &PointCloud) -> Result<UnitVec3, GeometryError> {
    observation_vector_from_centroid(viewpoint, &cloud.centroid())
}

pub fn observation_vector_from_centroid(viewpoint: &Pose3, centroid: &Vec3) -> Result<UnitVec3, GeometryError> {
    let d = viewpoint.translation - centroid;
    let n = d.norm();
    if n < MIN_OBSERVATION_DISTANCE {
        return Err(GeometryError::DegenerateObservation(n));
    }
    Ok(UnitVec3(d / n))
}

/// Distance between two viewing directions in spherical coordinates: the
/// Euclidean norm of the (wrapped azimuth difference, polar difference) pair.
pub fn angular_distance(a: &UnitVec3, b: &UnitVec3) -> f64 {
    let mut d_az = (a.azimuth() - b.azimuth()).abs();
    if d_az > PI {
        d_az = 2.0 * PI - d_az;
    }
    let d_polar = (a.polar() - b.polar()).abs();
    d_az.hypot(d_polar)
}

/// Largest value `angular_distance` can return.
pub const MAX_ANGULAR_DISTANCE: f64 = PI * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project(intr: &CameraIntrinsics, world_to_cam: &Pose3, point: &Vec3) -> Result<Projection, GeometryError> {
    let pc = world_to_cam.transform_point(point);
    project_camera_point(intr, &pc)
}

pub fn project_camera_point(intr: &CameraIntrinsics, pc: &Vec3) -> Result<Projection, GeometryError> {
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    Ok(Projection {
        u: intr.fx * pc.x / pc.z + intr.cx,
        v: intr.fy * pc.y / pc.z + intr.cy,
        depth: pc.z,
    })
}

/// Inverse of [`project`] given the depth: returns the world point.
pub fn back_project(intr: &CameraIntrinsics, world_to_cam: &Pose3, u: f64, v: f64, depth: f64) -> Vec3 {
    let pc = Vec3::new((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth);
    world_to_cam.inverse().transform_point(&pc)
}

/// Same as [`back_project`] but takes the camera-in-world pose directly.
pub fn back_project_from_viewpoint(intr: &CameraIntrinsics, viewpoint: &Pose3, u: f64, v: f64, depth: f64) -> Vec3 {
    let pc = Vec3::new((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth);
    viewpoint.transform_point(&pc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarityTolerance {
    /// Largest admissible out-of-plane rotation, radians.
    pub max_tilt: f64,
    /// Largest admissible vertical translation, meters.
    pub max_vertical: f64,
}

impl Default for PlanarityTolerance {
    fn default() -> Self {
        Self {
            max_tilt: 10f64.to_radians(),
            max_vertical: 0.02,
        }
    }
}

impl PlanarityTolerance {
    pub fn unbounded() -> Self {
        Self {
            max_tilt: f64::INFINITY,
            max_vertical: f64::INFINITY,
        }
    }

    pub fn check(&self, pose: &Pose3) -> Result<(), GeometryError> {
        let tilt = pose.tilt();
        let vertical = pose.translation.z.abs();
        if tilt > self.max_tilt || vertical > self.max_vertical {
            return Err(GeometryError::NonPlanarEstimate {
                tilt_deg: tilt.to_degrees(),
                vertical_m: vertical,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarError {
    pub rotation_deg: f64,
    pub translation_cm: f64,
}

impl PlanarError {
    pub fn within(&self, max_rotation_deg: f64, max_translation_cm: f64) -> bool {
        self.rotation_deg < max_rotation_deg && self.translation_cm < max_translation_cm
    }
}

/// Absolute yaw difference (degrees) and planar translation distance (cm)
/// between an estimated transform and a planar ground truth.
pub fn planar_error(
    estimate: &Pose3,
    truth: &PlanarTransform,
    tolerance: &PlanarityTolerance,
) -> Result<PlanarError, GeometryError> {
    tolerance.check(estimate)?;
    Ok(planar_difference(&PlanarTransform::from_pose(estimate), truth))
}

pub fn planar_difference(a: &PlanarTransform, b: &PlanarTransform) -> PlanarError {
    PlanarError {
        rotation_deg: wrap_angle(a.yaw - b.yaw).abs().to_degrees(),
        translation_cm: (a.tx - b.tx).hypot(a.ty - b.ty) * 100.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn cloud_at(c: Vec3) -> PointCloud {
        PointCloud::new(vec![c + Vec3::new(0.01, 0.0, 0.0), c - Vec3::new(0.01, 0.0, 0.0)]).unwrap()
    }

    #[test]
    fn observation_vector_examples() {
        let e = observation_vector(
            &Pose3::from_yaw_translation(0.0, Vec3::new(0.0, 0.0, 1.0)),
            &cloud_at(Vec3::zeros()),
        )
        .unwrap();
        assert_relative_eq!(*e.as_vec(), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);

        let e = observation_vector(
            &Pose3::from_yaw_translation(0.3, Vec3::new(1.0, 1.0, 0.0)),
            &cloud_at(Vec3::zeros()),
        )
        .unwrap();
        assert_relative_eq!(*e.as_vec(), Vec3::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0), epsilon = 1e-12);

        let err = observation_vector(&Pose3::identity(), &cloud_at(Vec3::zeros())).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateObservation(_)));
    }

    #[test]
    fn angular_distance_examples() {
        let x = UnitVec3::new(Vec3::x()).unwrap();
        let y = UnitVec3::new(Vec3::y()).unwrap();
        let up = UnitVec3::new(Vec3::z()).unwrap();
        let down = UnitVec3::new(-Vec3::z()).unwrap();
        assert_eq!(angular_distance(&x, &x), 0.0);
        assert_relative_eq!(angular_distance(&x, &y), PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(angular_distance(&up, &down), PI, epsilon = 1e-12);
    }

    #[test]
    fn azimuth_difference_wraps() {
        // azimuths 179 deg and -179 deg are 2 deg apart
        let a = UnitVec3::new(Vec3::new(179f64.to_radians().cos(), 179f64.to_radians().sin(), 0.0)).unwrap();
        let b = UnitVec3::new(Vec3::new((-179f64).to_radians().cos(), (-179f64).to_radians().sin(), 0.0)).unwrap();
        assert_relative_eq!(angular_distance(&a, &b), 2f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn project_examples() {
        let intr = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let p = project(&intr, &Pose3::identity(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (320.0, 240.0, 1.0));
        let p = project(&intr, &Pose3::identity(), &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.u, 370.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 240.0, epsilon = 1e-12);
        let err = project(&intr, &Pose3::identity(), &Vec3::new(0.1, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera(_)));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::centered(450.0, 640, 480).is_ok());
    }

    #[test]
    fn planar_error_examples() {
        let tol = PlanarityTolerance::default();
        let truth = PlanarTransform::new(30f64.to_radians(), 0.1, -0.2);
        let e = planar_error(&truth.lift(), &truth, &tol).unwrap();
        assert_eq!(e.rotation_deg, 0.0);
        assert_eq!(e.translation_cm, 0.0);

        let est = PlanarTransform::new(33f64.to_radians(), 0.1, -0.2).lift();
        let e = planar_error(&est, &truth, &tol).unwrap();
        assert_relative_eq!(e.rotation_deg, 3.0, epsilon = 1e-9);
        assert_relative_eq!(e.translation_cm, 0.0, epsilon = 1e-12);

        let est = PlanarTransform::new(179f64.to_radians(), 0.0, 0.0).lift();
        let truth = PlanarTransform::new((-179f64).to_radians(), 0.0, 0.0);
        let e = planar_error(&est, &truth, &tol).unwrap();
        assert_relative_eq!(e.rotation_deg, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn tilted_estimate_is_rejected() {
        let mut est = Pose3::identity();
        est.rotation = Pose3::exp_rotation(&Vec3::new(0.5, 0.0, 0.0));
        let err = planar_error(&est, &PlanarTransform::identity(), &PlanarityTolerance::default()).unwrap_err();
        assert!(matches!(err, GeometryError::NonPlanarEstimate { .. }));
        let mut lifted = Pose3::identity();
        lifted.translation.z = 0.05;
        assert!(planar_error(&lifted, &PlanarTransform::identity(), &PlanarityTolerance::default()).is_err());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(0.8, 0.0, 0.8);
        let pose = Pose3::look_at(eye, Vec3::zeros(), Vec3::z());
        assert!(pose.orthonormality_error() < 1e-12);
        let intr = CameraIntrinsics::new(450.0, 450.0, 320.0, 240.0, 640, 480).unwrap();
        let p = project(&intr, &pose.inverse(), &Vec3::zeros()).unwrap();
        assert_relative_eq!(p.u, 320.0, epsilon = 1e-9);
        assert_relative_eq!(p.v, 240.0, epsilon = 1e-9);
        // world up projects upward (smaller v)
        let q = project(&intr, &pose.inverse(), &Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(q.v < p.v);
    }

    #[test]
    fn matrix_rows_roundtrip() {
        let p = Pose3::look_at(Vec3::new(0.3, -0.7, 0.9), Vec3::new(0.1, 0.0, 0.0), Vec3::z());
        assert_eq!(Pose3::from_rows(&p.to_rows()), p);
    }

    fn arb_pose() -> impl Strategy<Value = Pose3> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_map(|(w, t)| Pose3::new(Pose3::exp_rotation(&Vec3::from(w)), Vec3::from(t)))
    }

    fn arb_unit() -> impl Strategy<Value = UnitVec3> {
        prop::array::uniform3(-1.0f64..1.0)
            .prop_filter("non-zero", |v| Vec3::from(*v).norm() > 1e-3)
            .prop_map(|v| UnitVec3::new(Vec3::from(v)).unwrap())
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!((id.rotation - Mat3::identity()).amax() < 1e-9);
            prop_assert!(id.translation.amax() < 1e-9);
            prop_assert!(p.orthonormality_error() < 1e-9);
        }

        #[test]
        fn angular_distance_symmetric_and_bounded(a in arb_unit(), b in arb_unit()) {
            let d = angular_distance(&a, &b);
            prop_assert_eq!(d, angular_distance(&b, &a));
            prop_assert!((0.0..=MAX_ANGULAR_DISTANCE + 1e-12).contains(&d));
            prop_assert_eq!(angular_distance(&a, &a), 0.0);
        }

        #[test]
        fn back_projection_recovers_point(p in arb_pose(), q in prop::array::uniform3(-1.0f64..1.0)) {
            let intr = CameraIntrinsics::centered(450.0, 640, 480).unwrap();
            let cam_point = Vec3::new(q[0], q[1], 1.5 + q[2]);
            let world = p.inverse().transform_point(&cam_point);
            let proj = project(&intr, &p, &world).unwrap();
            let back = back_project(&intr, &p, proj.u, proj.v, proj.depth);
            prop_assert!((back - world).amax() < 1e-9);
        }

        #[test]
        fn planar_error_ignores_full_turns(yaw_a in -3.1f64..3.1, yaw_b in -3.1f64..3.1, k in -2i32..3) {
            let tol = PlanarityTolerance::default();
            let truth = PlanarTransform { yaw: yaw_b, tx: 0.1, ty: 0.0 };
            let shifted = PlanarTransform { yaw: yaw_b + 2.0 * PI * k as f64, tx: 0.1, ty: 0.0 };
            let est = Pose3::from_yaw_translation(yaw_a, Vec3::new(0.0, 0.2, 0.0));
            let est_shifted = Pose3::from_yaw_translation(yaw_a + 2.0 * PI, Vec3::new(0.0, 0.2, 0.0));
            let e0 = planar_error(&est, &truth, &tol).unwrap();
            let e1 = planar_error(&est_shifted, &shifted, &tol).unwrap();
            prop_assert!((e0.rotation_deg - e1.rotation_deg).abs() < 1e-9);
            prop_assert!((e0.translation_cm - e1.translation_cm).abs() < 1e-9);
        }

        #[test]
        fn planar_compose_matches_lifted(a in (-3.1f64..3.1, -1.0f64..1.0, -1.0f64..1.0), b in (-3.1f64..3.1, -1.0f64..1.0, -1.0f64..1.0)) {
            let pa = PlanarTransform::new(a.0, a.1, a.2);
            let pb = PlanarTransform::new(b.0, b.1, b.2);
            let lifted = pa.lift().compose(&pb.lift());
            let planar = pa.compose(&pb).lift();
            prop_assert!((lifted.rotation - planar.rotation).amax() < 1e-12);
            prop_assert!((lifted.translation - planar.translation).amax() < 1e-12);
            let id = pa.compose(&pa.inverse());
            prop_assert!(id.yaw.abs() < 1e-12 && id.tx.abs() < 1e-12 && id.ty.abs() < 1e-12);
        }
    }
}
