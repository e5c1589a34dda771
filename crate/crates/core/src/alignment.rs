//! Correspondence transformation: instead of re-warping images once per
//! removed motion component, the target→source optical flow is turned
//! directly into the flows seen after aligning the two cameras' imaging
//! planes (coplanar flow) or optical axes (coaxial flow).
//!
//! Each matched source pixel is back-projected with the pixel-aligned
//! source depth, moved through the estimated motion with the rotation and
//! one translation component removed, and re-projected:
//!
//! ```text
//! q_pla = R̂⁻¹ (p^C_s − t̂) + t̂_tan      f_pla = K q_pla / q_pla.z − p_t
//! q_axi = R̂⁻¹ (p^C_s − t̂) + t̂_rad      f_axi = K q_axi / q_axi.z − p_t
//! ```
//!
//! Since the pose applies rotation before translation, `R̂⁻¹ p^C_s` alone
//! would leave `R̂⁻¹ t̂` behind; subtracting it and adding back the kept
//! component makes the aligned flows the exact tangential / radial flows
//! at the true motion. For `R̂ = I` both reduce to `R̂⁻¹ p^C_s − t̂_rad`
//! and `R̂⁻¹ p^C_s − t̂_tan`.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::flow::{DepthMap, FlowField, FlowKind, DENOM_EPS};
use crate::geometry::{check_rotation, CameraIntrinsics, MotionComponents};
use crate::grid::{bilinear, Grid, Mask};

/// Default forward-backward consistency threshold, pixels.
pub const FB_THRESHOLD: f64 = 1.0;

/// A scalar map with its own validity mask (e.g. a warped depth map, whose
/// out-of-bounds pixels have no value).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedDepth {
    pub values: Grid<f64>,
    pub valid: Mask,
}

impl MaskedDepth {
    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        self.valid.get(u, v).then(|| *self.values.get(u, v))
    }
}

/// Dense target→source correspondences with both depth maps.
#[derive(Clone, Debug)]
pub struct CorrespondenceSet {
    pub flow_ts: FlowField,
    pub depth_t: DepthMap,
    pub depth_s: DepthMap,
    /// Static, in-bounds, non-occluded pixels. Always a subset of
    /// `flow_ts.valid`.
    pub valid: Mask,
    /// Exact source depth at each target pixel's match, when known (e.g.
    /// from a simulator). Otherwise it is obtained with [`warp_depth`].
    pub aligned_source_depth: Option<MaskedDepth>,
}

impl CorrespondenceSet {
    pub fn new(
        flow_ts: FlowField,
        depth_t: DepthMap,
        depth_s: DepthMap,
        valid: Option<Mask>,
    ) -> Result<Self> {
        if !flow_ts.valid.same_shape(depth_t.values()) || !flow_ts.valid.same_shape(depth_s.values())
        {
            return Err(Error::DimensionMismatch(
                "flow and depth maps must share dimensions".into(),
            ));
        }
        if depth_t.intrinsics() != depth_s.intrinsics() {
            return Err(Error::DimensionMismatch(
                "target and source depth maps use different intrinsics".into(),
            ));
        }
        let valid = match valid {
            Some(m) => m.and(&flow_ts.valid)?,
            None => flow_ts.valid.clone(),
        };
        Ok(Self {
            flow_ts,
            depth_t,
            depth_s,
            valid,
            aligned_source_depth: None,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        self.depth_t.intrinsics()
    }

    pub fn width(&self) -> usize {
        self.depth_t.width()
    }

    pub fn height(&self) -> usize {
        self.depth_t.height()
    }

    pub fn with_aligned_source_depth(mut self, depth: MaskedDepth) -> Result<Self> {
        if !depth.values.same_shape(&self.valid) || !depth.valid.same_shape(&self.valid) {
            return Err(Error::DimensionMismatch("aligned source depth shape".into()));
        }
        self.aligned_source_depth = Some(depth);
        Ok(self)
    }

    /// Restricts the valid set with an additional user mask (dynamic
    /// objects, occlusions from an external detector, ...).
    pub fn with_mask(mut self, mask: &Mask) -> Result<Self> {
        self.valid = self.valid.and(mask)?;
        Ok(self)
    }

    /// Restricts the valid set to forward-backward consistent pixels.
    pub fn with_forward_backward_check(mut self, flow_st: &FlowField, threshold: f64) -> Result<Self> {
        let fb = forward_backward_mask(&self.flow_ts, flow_st, threshold)?;
        self.valid = self.valid.and(&fb)?;
        Ok(self)
    }

    /// Source depth at each target pixel's match: the exact map when
    /// present, otherwise the bilinear warp of `depth_s`.
    pub fn source_depth_at_targets(&self) -> MaskedDepth {
        match &self.aligned_source_depth {
            Some(d) => d.clone(),
            None => warp_depth(&self.depth_s, &self.flow_ts),
        }
    }
}

/// Samples `depth_s` at `p_t + flow(p_t)` with bilinear interpolation.
/// Out-of-bounds samples and invalid flow pixels are invalid.
pub fn warp_depth(depth_s: &DepthMap, flow_ts: &FlowField) -> MaskedDepth {
    let cells = Grid::par_from_fn(flow_ts.width(), flow_ts.height(), |u, v| {
        let f = flow_ts.at(u, v)?;
        bilinear(depth_s.values(), u as f64 + f.x, v as f64 + f.y)
    });
    MaskedDepth {
        valid: cells.map(|c| c.is_some()),
        values: cells.map(|c| c.unwrap_or(0.0)),
    }
}

/// Pixels where following the forward flow and then the backward flow
/// (bilinearly sampled) returns within `threshold` pixels.
pub fn forward_backward_mask(flow_ts: &FlowField, flow_st: &FlowField, threshold: f64) -> Result<Mask> {
    if !flow_ts.valid.same_shape(&flow_st.valid) {
        return Err(Error::DimensionMismatch("forward/backward flow shapes".into()));
    }
    let bx = flow_st.vectors.map(|f| f.x);
    let by = flow_st.vectors.map(|f| f.y);
    let bvalid = flow_st.valid.map(|&b| if b { 1.0 } else { 0.0 });
    Ok(Grid::par_from_fn(flow_ts.width(), flow_ts.height(), |u, v| {
        let Some(f) = flow_ts.at(u, v) else {
            return false;
        };
        let (x, y) = (u as f64 + f.x, v as f64 + f.y);
        // All four bilinear taps must be valid.
        match (bilinear(&bx, x, y), bilinear(&by, x, y), bilinear(&bvalid, x, y)) {
            (Some(gx), Some(gy), Some(ok)) if ok >= 1.0 - 1e-12 => {
                (f + Vector2::new(gx, gy)).norm() < threshold
            }
            _ => false,
        }
    }))
}

/// Matched source pixels back-projected into the source camera frame.
#[derive(Clone, Debug)]
pub struct SourcePoints {
    pub points: Grid<Vector3<f64>>,
    pub valid: Mask,
    pub intrinsics: CameraIntrinsics,
}

/// `p^C_s = D_{s→t}(p_t) · K⁻¹ · p̃_s` for every valid correspondence.
pub fn backproject_source(corr: &CorrespondenceSet) -> SourcePoints {
    let k = *corr.intrinsics();
    let depth = corr.source_depth_at_targets();
    let cells = Grid::par_from_fn(corr.width(), corr.height(), |u, v| {
        if !*corr.valid.get(u, v) {
            return None;
        }
        let z = depth.at(u, v)?;
        if !(z > DENOM_EPS && z.is_finite()) {
            return None;
        }
        let f = corr.flow_ts.at(u, v)?;
        Some(k.backproject(u as f64 + f.x, v as f64 + f.y, z))
    });
    SourcePoints {
        valid: cells.map(|c| c.is_some()),
        points: cells.map(|c| c.unwrap_or_else(Vector3::zeros)),
        intrinsics: k,
    }
}

/// Flows after imaging-plane alignment (coplanar) and optical-axis
/// alignment (coaxial).
#[derive(Clone, Debug)]
pub struct AlignedFlows {
    pub coplanar: FlowField,
    pub coaxial: FlowField,
}

/// Aligned flows for an estimated motion. See the module docs for the
/// formulas.
pub fn aligned_flows(corr: &CorrespondenceSet, est: &MotionComponents) -> Result<AlignedFlows> {
    aligned_flows_from_points(&backproject_source(corr), est)
}

/// As [`aligned_flows`], reusing back-projected points across many motion
/// hypotheses.
pub fn aligned_flows_from_points(points: &SourcePoints, est: &MotionComponents) -> Result<AlignedFlows> {
    check_rotation(est.rotation())?;
    let k = points.intrinsics;
    let r_inv = est.rotation().transpose();
    let base = r_inv * est.translation();
    let offset_pla = base - est.tangential();
    let offset_axi = base - est.radial();
    let (w, h) = (points.points.width(), points.points.height());
    let project = |offset: Vector3<f64>, kind: FlowKind| {
        FlowField::from_pixels(w, h, kind, |u, v| {
            if !*points.valid.get(u, v) {
                return None;
            }
            let q = r_inv * points.points.get(u, v) - offset;
            k.project(&q, DENOM_EPS)
                .map(|p| p - Vector2::new(u as f64, v as f64))
        })
    };
    Ok(AlignedFlows {
        coplanar: project(offset_pla, FlowKind::Coplanar),
        coaxial: project(offset_axi, FlowKind::Coaxial),
    })
}
