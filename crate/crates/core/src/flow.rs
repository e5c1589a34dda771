//! Dense flow synthesis for each motion class.
//!
//! All fields are evaluated at integer pixel coordinates `(u, v)` (column,
//! row). Pixels whose transformed depth or perspective denominator falls
//! below [`DENOM_EPS`] are marked invalid in the field's mask instead of
//! carrying a sentinel value.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_rotation, CameraIntrinsics, SE3Pose};
use crate::grid::{Grid, Mask};

/// Denominators (depths, homogeneous scales) at or below this are invalid.
pub const DENOM_EPS: f64 = 1e-9;

/// A dense, strictly positive depth map attached to its camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    values: Grid<f64>,
    intrinsics: CameraIntrinsics,
}

impl DepthMap {
    pub fn new(values: Grid<f64>, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        if values.width() != intrinsics.width || values.height() != intrinsics.height {
            return Err(Error::DimensionMismatch(format!(
                "depth grid {}x{} vs intrinsics {}x{}",
                values.width(),
                values.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some((u, v, z)) = values.indexed().find(|(_, _, z)| !(z.is_finite() && **z > 0.0)) {
            return Err(Error::InvalidDepth(format!("depth {z} at ({u}, {v})")));
        }
        Ok(Self { values, intrinsics })
    }

    pub fn constant(intrinsics: CameraIntrinsics, depth: f64) -> Result<Self> {
        Self::new(
            Grid::filled(intrinsics.width, intrinsics.height, depth),
            intrinsics,
        )
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        *self.values.get(u, v)
    }

    /// Multiplies every depth by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.values.map(|z| z * s), self.intrinsics)
    }
}

/// What motion (or processing step) a flow field represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Rigid,
    Optical,
    Rotational,
    Tangential,
    Radial,
    Translational,
    Coplanar,
    Coaxial,
}

/// Per-pixel 2-vectors in pixels with a validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub vectors: Grid<Vector2<f64>>,
    pub valid: Mask,
    pub kind: FlowKind,
}

impl FlowField {
    pub fn new(vectors: Grid<Vector2<f64>>, valid: Mask, kind: FlowKind) -> Result<Self> {
        if !vectors.same_shape(&valid) {
            return Err(Error::DimensionMismatch("flow and mask shapes differ".into()));
        }
        Ok(Self {
            vectors,
            valid,
            kind,
        })
    }

    pub fn zeros(width: usize, height: usize, kind: FlowKind) -> Self {
        Self {
            vectors: Grid::filled(width, height, Vector2::zeros()),
            valid: Grid::filled(width, height, true),
            kind,
        }
    }

    /// Builds a field from a per-pixel function returning `None` for invalid
    /// pixels. Invalid pixels store a zero vector.
    pub(crate) fn from_pixels(
        width: usize,
        height: usize,
        kind: FlowKind,
        f: impl Fn(usize, usize) -> Option<Vector2<f64>> + Sync + Send,
    ) -> Self {
        let cells = Grid::par_from_fn(width, height, f);
        let valid = cells.map(|c| c.is_some());
        let vectors = cells.map(|c| c.unwrap_or_else(Vector2::zeros));
        Self {
            vectors,
            valid,
            kind,
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    /// The flow at `(u, v)` if valid.
    pub fn at(&self, u: usize, v: usize) -> Option<Vector2<f64>> {
        self.valid.get(u, v).then(|| *self.vectors.get(u, v))
    }

    /// Iterates `(u, v, flow)` over valid pixels.
    pub fn valid_vectors(&self) -> impl Iterator<Item = (usize, usize, Vector2<f64>)> + '_ {
        self.vectors
            .indexed()
            .filter(|(u, v, _)| *self.valid.get(*u, *v))
            .map(|(u, v, f)| (u, v, *f))
    }

    pub fn with_kind(mut self, kind: FlowKind) -> Self {
        self.kind = kind;
        self
    }

    /// Largest per-pixel difference over pixels valid in both fields.
    pub fn max_abs_diff(&self, other: &FlowField) -> f64 {
        self.valid_vectors()
            .filter_map(|(u, v, a)| other.at(u, v).map(|b| (a - b).abs().max()))
            .fold(0.0, f64::max)
    }
}

/// Partial derivatives of the translational flow with respect to target
/// depth and each translation component.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowJacobian {
    pub d_z: Grid<Vector2<f64>>,
    pub d_tx: Grid<Vector2<f64>>,
    pub d_ty: Grid<Vector2<f64>>,
    pub d_tz: Grid<Vector2<f64>>,
    pub valid: Mask,
}

fn homogeneous(u: usize, v: usize) -> Vector3<f64> {
    Vector3::new(u as f64, v as f64, 1.0)
}

/// Rigid flow induced by `pose` over a static scene with target depth
/// `depth`: `p̃_s = (1/z_s) K (z_t R K⁻¹ p̃_t + t)`, flow `= p_s − p_t`.
pub fn rigid_flow(depth: &DepthMap, pose: &SE3Pose) -> Result<FlowField> {
    check_rotation(pose.rotation())?;
    let k = depth.intrinsics().matrix();
    let m = k * pose.rotation() * depth.intrinsics().inverse_matrix();
    let kt = k * pose.translation();
    Ok(FlowField::from_pixels(
        depth.width(),
        depth.height(),
        FlowKind::Rigid,
        |u, v| {
            let p = homogeneous(u, v);
            let q = depth.at(u, v) * (m * p) + kt;
            (q.z > DENOM_EPS).then(|| Vector2::new(q.x / q.z - p.x, q.y / q.z - p.y))
        },
    ))
}

/// Homography `H = K R K⁻¹` relating the two views under pure rotation.
pub fn rotation_homography(rotation: &Matrix3<f64>, intrinsics: &CameraIntrinsics) -> Matrix3<f64> {
    intrinsics.matrix() * rotation * intrinsics.inverse_matrix()
}

/// Flow of a pure rotation. With `hᵢᵀ` the rows of `H`,
///
/// ```text
/// f = ( p̃ᵀ(−h₃ i₁ᵀ)p̃ + h₁ᵀp̃ ,  p̃ᵀ(−h₃ i₂ᵀ)p̃ + h₂ᵀp̃ ) / h₃ᵀp̃
/// ```
///
/// No depth enters, so the field depends on the rotation and intrinsics
/// alone. Pixels with `h₃ᵀp̃ ≤ DENOM_EPS` are invalid.
pub fn rotational_flow(rotation: &Matrix3<f64>, intrinsics: &CameraIntrinsics) -> Result<FlowField> {
    check_rotation(rotation)?;
    let h = rotation_homography(rotation, intrinsics);
    let (h1, h2, h3) = (
        h.row(0).transpose(),
        h.row(1).transpose(),
        h.row(2).transpose(),
    );
    Ok(FlowField::from_pixels(
        intrinsics.width,
        intrinsics.height,
        FlowKind::Rotational,
        |u, v| {
            let p = homogeneous(u, v);
            let w = h3.dot(&p);
            if w <= DENOM_EPS {
                return None;
            }
            // p̃ᵀ(−h₃ iₖᵀ)p̃ = −(h₃ᵀp̃)(iₖᵀp̃)
            let qx = -w * p.x + h1.dot(&p);
            let qy = -w * p.y + h2.dot(&p);
            Some(Vector2::new(qx / w, qy / w))
        },
    ))
}

/// Flow of a pure tangential translation `(t_x, t_y, 0)`:
/// `(f_u t_x, f_v t_y) / z_t`.
pub fn tangential_flow(depth: &DepthMap, t_xy: &Vector2<f64>) -> FlowField {
    let k = *depth.intrinsics();
    let num = Vector2::new(k.fu * t_xy.x, k.fv * t_xy.y);
    FlowField::from_pixels(
        depth.width(),
        depth.height(),
        FlowKind::Tangential,
        |u, v| Some(num / depth.at(u, v)),
    )
}

/// Flow of a pure radial translation `(0, 0, t_z)`:
/// `−t_z / (z_t + t_z) · (p_t − p_0)`.
pub fn radial_flow(depth: &DepthMap, t_z: f64) -> FlowField {
    let k = *depth.intrinsics();
    FlowField::from_pixels(depth.width(), depth.height(), FlowKind::Radial, |u, v| {
        let den = depth.at(u, v) + t_z;
        (den > DENOM_EPS).then(|| {
            let d = Vector2::new(u as f64 - k.u0, v as f64 - k.v0);
            d * (-t_z / den)
        })
    })
}

/// Flow of a general translation with no rotation:
/// `(f_u t_x − (u−u_0) t_z, f_v t_y − (v−v_0) t_z) / (z_t + t_z)`.
pub fn translational_flow(depth: &DepthMap, t: &Vector3<f64>) -> FlowField {
    let k = *depth.intrinsics();
    FlowField::from_pixels(
        depth.width(),
        depth.height(),
        FlowKind::Translational,
        |u, v| {
            let den = depth.at(u, v) + t.z;
            (den > DENOM_EPS).then(|| {
                Vector2::new(
                    k.fu * t.x - (u as f64 - k.u0) * t.z,
                    k.fv * t.y - (v as f64 - k.v0) * t.z,
                ) / den
            })
        },
    )
}

/// Analytic partials of [`translational_flow`] with respect to `z_t`,
/// `t_x`, `t_y` and `t_z`.
pub fn flow_jacobian(depth: &DepthMap, t: &Vector3<f64>) -> FlowJacobian {
    let k = *depth.intrinsics();
    let (w, h) = (depth.width(), depth.height());
    let cells = Grid::par_from_fn(w, h, |u, v| {
        let z = depth.at(u, v);
        let den = z + t.z;
        if den <= DENOM_EPS {
            return None;
        }
        let du = u as f64 - k.u0;
        let dv = v as f64 - k.v0;
        let inv = 1.0 / den;
        let inv2 = inv * inv;
        let d_z = -inv2 * Vector2::new(k.fu * t.x - du * t.z, k.fv * t.y - dv * t.z);
        let d_tx = inv * Vector2::new(k.fu, 0.0);
        let d_ty = inv * Vector2::new(0.0, k.fv);
        let d_tz = -inv2 * Vector2::new(du * z + k.fu * t.x, dv * z + k.fv * t.y);
        Some([d_z, d_tx, d_ty, d_tz])
    });
    let pick = |i: usize| cells.map(|c| c.map_or_else(Vector2::zeros, |a| a[i]));
    FlowJacobian {
        d_z: pick(0),
        d_tx: pick(1),
        d_ty: pick(2),
        d_tz: pick(3),
        valid: cells.map(|c| c.is_some()),
    }
}
