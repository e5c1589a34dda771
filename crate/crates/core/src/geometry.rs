//! Pinhole intrinsics, rigid poses and the rotation / tangential / radial
//! factorization of ego-motion.
//!
//! A pose maps target-camera points into the source camera,
//! `X_s = R · X_t + t`. It factors as
//!
//! ```text
//! T = T_rad · T_tan · T_rot
//!   = [I (0,0,t_z)] · [I (t_x,t_y,0)] · [R 0]
//! ```
//!
//! and the order matters: rotation is applied first, then the two
//! translations, which commute with each other but not with the rotation.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frobenius bound on `RᵀR − I` for a matrix to count as a rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole camera intrinsics in pixels, together with the image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, u0: f64, v0: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fu,
            fv,
            u0,
            v0,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// KITTI-style normalized intrinsics (`fu = 0.58 W`, `fv = 1.92 H`,
    /// principal point at the image centre) for a given resolution.
    pub fn kitti_like(width: usize, height: usize) -> Result<Self> {
        Self::new(
            0.58 * width as f64,
            1.92 * height as f64,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fu, self.fv, self.u0, self.v0]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fu <= 0.0 || self.fv <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fu={} fv={}",
                self.fu, self.fv
            )));
        }
        if !(self.u0 > 0.0 && self.u0 < self.width as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "u0={} outside (0, {})",
                self.u0, self.width
            )));
        }
        if !(self.v0 > 0.0 && self.v0 < self.height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "v0={} outside (0, {})",
                self.v0, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fu, 0.0, self.u0, //
            0.0, self.fv, self.v0, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fu,
            0.0,
            -self.u0 / self.fu,
            0.0,
            1.0 / self.fv,
            -self.v0 / self.fv,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.u0, self.v0)
    }

    /// Pinhole projection of a camera-frame point. `None` when the point is
    /// not in front of the camera by more than `min_depth`.
    pub fn project(&self, p: &Vector3<f64>, min_depth: f64) -> Option<Vector2<f64>> {
        if p.z <= min_depth || !p.z.is_finite() {
            return None;
        }
        Some(Vector2::new(
            self.fu * p.x / p.z + self.u0,
            self.fv * p.y / p.z + self.v0,
        ))
    }

    /// Back-projects pixel `(u, v)` at depth `z` into the camera frame.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(z * (u - self.u0) / self.fu, z * (v - self.v0) / self.fv, z)
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Checks that `r` is a proper rotation within [`ORTHONORMAL_TOL`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidPose("non-finite rotation entry".into()));
    }
    let err = orthonormality_error(r);
    if err >= ORTHONORMAL_TOL {
        return Err(Error::InvalidPose(format!(
            "rotation not orthonormal (|RᵀR − I|_F = {err:.3e})"
        )));
    }
    if r.determinant() <= 0.0 {
        return Err(Error::InvalidPose("rotation has negative determinant".into()));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
/// Never applied implicitly; callers opt in.
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidPose("SVD failed during projection".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(u * d * v_t)
}

/// Rotation by `angle` radians about `axis`. The axis is normalized; a zero
/// or non-finite axis is rejected.
pub fn rotation_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Matrix3<f64>> {
    let n = axis.norm();
    if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
        return Err(Error::InvalidAxis(format!(
            "axis {:?} with angle {angle}",
            axis.as_slice()
        )));
    }
    let unit = Unit::new_unchecked(axis / n);
    Ok(*Rotation3::from_axis_angle(&unit, angle).matrix())
}

/// Exponential map from a rotation vector (axis × angle).
pub fn rotation_from_vector(w: &Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::new(*w).matrix()
}

/// Logarithm map: the rotation vector of `r`.
pub fn rotation_to_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    // sin θ · axis from the skew part, cos θ from the trace. atan2 stays
    // accurate near θ = 0 where acos of the trace does not.
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    if c < -0.9 {
        // Near π the skew part vanishes; the symmetric part carries the axis.
        return Rotation3::from_matrix_unchecked(*r).scaled_axis();
    }
    let s = w.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    w * (s.atan2(c) / s)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    // The trace formula loses precision near zero, fall back to the log map.
    if c > 0.999 {
        rotation_to_vector(&(a.transpose() * b)).norm()
    } else {
        c.clamp(-1.0, 1.0).acos()
    }
}

/// A rigid transformation `[R | t]` mapping target-frame points into the
/// source frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Result<Self> {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Result<Self> {
        Self::new(r, Vector3::zeros())
    }

    /// Pose from a rotation vector and a translation.
    pub fn from_parts(rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(rotation_from_vector(&rotation_vector), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Frobenius distance between the homogeneous matrices.
    pub fn frobenius_distance(&self, other: &SE3Pose) -> f64 {
        (self.matrix() - other.matrix()).norm()
    }
}

/// The three factors of a pose: `pose = rad ∘ tan ∘ rot`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionComponents {
    pub rot: SE3Pose,
    pub tan: SE3Pose,
    pub rad: SE3Pose,
}

impl MotionComponents {
    /// Recomposes `rad · tan · rot`.
    pub fn recompose(&self) -> SE3Pose {
        self.rad.compose(&self.tan).compose(&self.rot)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        self.rot.rotation()
    }

    /// `(t_x, t_y, 0)`.
    pub fn tangential(&self) -> &Vector3<f64> {
        self.tan.translation()
    }

    /// `(0, 0, t_z)`.
    pub fn radial(&self) -> &Vector3<f64> {
        self.rad.translation()
    }

    /// Full translation `t^Tan + t^Rad`.
    pub fn translation(&self) -> Vector3<f64> {
        self.tangential() + self.radial()
    }
}

/// Splits a pose into pure rotation, pure tangential and pure radial factors.
/// Exact: no thresholding of small components.
pub fn decompose_motion(pose: &SE3Pose) -> Result<MotionComponents> {
    check_rotation(pose.rotation())?;
    let t = pose.translation();
    Ok(MotionComponents {
        rot: SE3Pose {
            rotation: *pose.rotation(),
            translation: Vector3::zeros(),
        },
        tan: SE3Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(t.x, t.y, 0.0),
        },
        rad: SE3Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, t.z),
        },
    })
}

/// Residual transforms left in the radial and tangential factors when the
/// true pose is decomposed with estimated components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionDeviation {
    pub delta_rad: SE3Pose,
    pub delta_tan: SE3Pose,
}

/// Deviations by definition:
///
/// ```text
/// ΔT_rad = (T_rad)⁻¹ · T · (T̂_rot)⁻¹ · (T̂_tan)⁻¹
/// ΔT_tan = (T_tan)⁻¹ · T · (T̂_rot)⁻¹ · (T̂_rad)⁻¹
/// ```
pub fn deviation_transforms(
    true_pose: &SE3Pose,
    est: &MotionComponents,
) -> Result<MotionDeviation> {
    let truth = decompose_motion(true_pose)?;
    for p in [&est.rot, &est.tan, &est.rad] {
        check_rotation(p.rotation())?;
    }
    let stripped = true_pose.compose(&est.rot.inverse());
    Ok(MotionDeviation {
        delta_rad: truth
            .rad
            .inverse()
            .compose(&stripped)
            .compose(&est.tan.inverse()),
        delta_tan: truth
            .tan
            .inverse()
            .compose(&stripped)
            .compose(&est.rad.inverse()),
    })
}

/// The same deviations in closed form, built from `ΔR = R̂ R⁻¹` and the
/// translational errors `Δt = t̂ − t`:
///
/// ```text
/// ΔT_rad = [ΔR⁻¹ | (I − ΔR⁻¹) t_tan − ΔR⁻¹ Δt_tan]
/// ΔT_tan = [ΔR⁻¹ | (I − ΔR⁻¹) t_rad − ΔR⁻¹ Δt_rad]
/// ```
pub fn deviation_closed_form(
    true_pose: &SE3Pose,
    est: &MotionComponents,
) -> Result<MotionDeviation> {
    let truth = decompose_motion(true_pose)?;
    let dr = est.rotation() * truth.rotation().transpose();
    let dr_inv = dr.transpose();
    let eye = Matrix3::identity();
    let dt_tan = est.tangential() - truth.tangential();
    let dt_rad = est.radial() - truth.radial();
    Ok(MotionDeviation {
        delta_rad: SE3Pose {
            rotation: dr_inv,
            translation: (eye - dr_inv) * truth.tangential() - dr_inv * dt_tan,
        },
        delta_tan: SE3Pose {
            rotation: dr_inv,
            translation: (eye - dr_inv) * truth.radial() - dr_inv * dt_rad,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose {
        let w = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        SE3Pose::from_parts(w, t).unwrap()
    }

    #[test]
    fn identity_decomposes_into_identities() {
        let c = decompose_motion(&SE3Pose::identity()).unwrap();
        for p in [c.rot, c.tan, c.rad] {
            assert_eq!(p, SE3Pose::identity());
        }
    }

    #[test]
    fn pure_translation_split() {
        let pose = SE3Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let c = decompose_motion(&pose).unwrap();
        assert_eq!(*c.tangential(), Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(*c.radial(), Vector3::new(0.0, 0.0, 3.0));
        assert_eq!(*c.rotation(), Matrix3::identity());
    }

    #[test]
    fn recomposition_of_random_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_pose(&mut rng);
        let pose = SE3Pose::new(*r.rotation(), Vector3::new(0.3, -0.1, 1.4)).unwrap();
        // Direct 4x4 product, independent of `compose`.
        let c = decompose_motion(&pose).unwrap();
        let product = c.rad.matrix() * c.tan.matrix() * c.rot.matrix();
        assert!((product - pose.matrix()).norm() < 1e-12);
    }

    #[test]
    fn factor_order_matters() {
        let pose = SE3Pose::from_parts(Vector3::new(0.2, -0.3, 0.1), Vector3::new(0.5, 0.2, 1.0))
            .unwrap();
        let c = decompose_motion(&pose).unwrap();
        let reversed = c.rot.compose(&c.tan).compose(&c.rad);
        assert!(reversed.frobenius_distance(&pose) > 1e-6);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-6;
        assert!(matches!(
            SE3Pose::new(m, Vector3::zeros()),
            Err(Error::InvalidPose(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(SE3Pose::new(reflection, Vector3::zeros()).is_err());
        // Polar projection repairs small drift on request.
        let fixed = orthonormalize(&m).unwrap();
        assert!(check_rotation(&fixed).is_ok());
    }

    #[test]
    fn axis_angle_basics() {
        let z = Vector3::z();
        assert_eq!(rotation_from_axis_angle(&z, 0.0).unwrap(), Matrix3::identity());
        let r = rotation_from_axis_angle(&z, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert!(matches!(
            rotation_from_axis_angle(&Vector3::zeros(), 1.0),
            Err(Error::InvalidAxis(_))
        ));
    }

    #[test]
    fn axis_angle_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let angle = rng.random_range(-3.0..3.0);
            let r = rotation_from_axis_angle(&axis, angle).unwrap();
            assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_estimate_gives_identity_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let est = decompose_motion(&pose).unwrap();
        let d = deviation_transforms(&pose, &est).unwrap();
        assert!(d.delta_rad.frobenius_distance(&SE3Pose::identity()) < 1e-12);
        assert!(d.delta_tan.frobenius_distance(&SE3Pose::identity()) < 1e-12);
    }

    #[test]
    fn one_degree_rotation_error_two_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = random_pose(&mut rng);
        let mut est = decompose_motion(&pose).unwrap();
        let kick = rotation_from_axis_angle(&Vector3::new(0.3, 1.0, -0.2), 1f64.to_radians())
            .unwrap();
        est.rot = SE3Pose::from_rotation(kick * est.rot.rotation()).unwrap();
        let a = deviation_transforms(&pose, &est).unwrap();
        let b = deviation_closed_form(&pose, &est).unwrap();
        assert!(a.delta_rad.frobenius_distance(&b.delta_rad) < 1e-12);
        assert!(a.delta_tan.frobenius_distance(&b.delta_tan) < 1e-12);
    }

    #[test]
    fn radial_motion_leaks_into_tangential_deviation() {
        let pose = SE3Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let mut est = decompose_motion(&pose).unwrap();
        let dr = rotation_from_axis_angle(&Vector3::new(1.0, 0.0, 0.0), 0.5f64.to_radians())
            .unwrap();
        // ΔR = R̂ R⁻¹ with R = I.
        est.rot = SE3Pose::from_rotation(dr).unwrap();
        let d = deviation_transforms(&pose, &est).unwrap();
        let expected = (Matrix3::identity() - dr.transpose()) * Vector3::new(0.0, 0.0, 2.0);
        assert!((d.delta_tan.translation() - expected).norm() < 1e-15);
        assert!(expected.norm() > 1e-3);
        assert!((d.delta_tan.rotation() - dr.transpose()).norm() < 1e-15);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 32.0, 24.0, 64, 48).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 64.0, 24.0, 64, 48).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 32.0, 0.0, 64, 48).is_err());
        let k = CameraIntrinsics::kitti_like(640, 192).unwrap();
        assert!((k.matrix() * k.inverse_matrix() - Matrix3::identity()).norm() < 1e-15);
    }
}
