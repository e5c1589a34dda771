//! Supervisory signals built on the aligned flows.
//!
//! * `L_pla`: variance of the angle between each coplanar flow vector and
//!   the image x-axis. Zero when the coplanar flow is a pure tangential
//!   field (all vectors parallel).
//! * `L_axi`: mean angle between each coaxial flow vector and the line
//!   through the principal point. Zero for a pure radial field, whether it
//!   points away from the principal point (`t_z < 0`) or towards it.
//! * `L_tan`, `L_rad`: constraint cycles between depth and each translation
//!   component through the per-pixel ratios `ρ = z / t`.
//!
//! Angles are `arccos(a·b / |a||b|)` evaluated as `atan2(|a×b|, a·b)`, the
//! same function on `[0, π]` without arccos's loss of precision near the
//! ends. Like arccos, it folds `θ` and `−θ` together.

mod photometric;
mod stats;

pub use photometric::{photometric_loss, ssim_map, warp_image, Image};
pub use stats::RunningStats;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::{aligned_flows, AlignedFlows, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::flow::{DepthMap, FlowField};
use crate::geometry::{CameraIntrinsics, MotionComponents};
use crate::grid::{Grid, Mask};

/// Flow vectors shorter than this (pixels) carry no usable direction.
pub const FLOW_EPS: f64 = 1e-6;
/// Translation components below this magnitude (scene units) skip the
/// constraint-cycle terms that divide by them.
pub const TRANSLATION_EPS: f64 = 1e-4;

fn angle_between(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x * b.y - a.y * b.x).abs().atan2(a.dot(b))
}

/// Angle between the lines spanned by `a` and `b`.
fn line_angle(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x * b.y - a.y * b.x).abs().atan2(a.dot(b).abs())
}

/// Variance over valid pixels of the angle between the coplanar flow and
/// `e₁ = (1, 0)`.
pub fn loss_pla(coplanar: &FlowField) -> Result<f64> {
    let e1 = Vector2::x();
    let mut stats = RunningStats::default();
    for (_, _, f) in coplanar.valid_vectors() {
        if f.norm() > FLOW_EPS {
            stats.push(angle_between(&e1, &f));
        }
    }
    if stats.count() < 2 {
        return Err(Error::UndefinedLoss(format!(
            "L_pla needs at least 2 pixels with flow above {FLOW_EPS} px, found {}",
            stats.count()
        )));
    }
    Ok(stats.population_variance())
}

/// Mean over valid pixels of the angle in `[0, π/2]` between the coaxial
/// flow and the line along `p_t − p_0`.
pub fn loss_axi(coaxial: &FlowField, intrinsics: &CameraIntrinsics) -> Result<f64> {
    let p0 = intrinsics.principal_point();
    let mut stats = RunningStats::default();
    for (u, v, f) in coaxial.valid_vectors() {
        let d = Vector2::new(u as f64, v as f64) - p0;
        if f.norm() > FLOW_EPS && d.norm() > FLOW_EPS {
            stats.push(line_angle(&f, &d));
        }
    }
    if stats.count() == 0 {
        return Err(Error::UndefinedLoss(
            "L_axi has no pixel with both flow and offset from the principal point".into(),
        ));
    }
    Ok(stats.mean())
}

/// Per-pixel ratios between depth and each translation component.
#[derive(Clone, Debug)]
pub struct RatioMaps {
    pub rho_x: Grid<f64>,
    pub rho_y: Grid<f64>,
    pub rho_z: Grid<f64>,
    pub valid_x: Mask,
    pub valid_y: Mask,
    pub valid_z: Mask,
}

/// Translation axis of a ratio map or constraint term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl RatioMaps {
    pub fn get(&self, axis: Axis) -> (&Grid<f64>, &Mask) {
        match axis {
            Axis::X => (&self.rho_x, &self.valid_x),
            Axis::Y => (&self.rho_y, &self.valid_y),
            Axis::Z => (&self.rho_z, &self.valid_z),
        }
    }
}

/// ```text
/// ρ_x = f_u / f_pla.x      ρ_y = f_v / f_pla.y
/// ρ_z = −dᵀ(f_axi + d) / dᵀf_axi,   d = p_t − p_0
/// ```
///
/// Each ratio's mask drops pixels whose denominator magnitude is below
/// [`FLOW_EPS`].
pub fn ratio_maps(flows: &AlignedFlows, intrinsics: &CameraIntrinsics) -> RatioMaps {
    let k = intrinsics;
    let pla = &flows.coplanar;
    let axi = &flows.coaxial;
    let ratio = |num: f64, den: f64| (den.abs() >= FLOW_EPS).then(|| num / den);
    let x = Grid::from_fn(pla.width(), pla.height(), |u, v| {
        pla.at(u, v).and_then(|f| ratio(k.fu, f.x))
    });
    let y = Grid::from_fn(pla.width(), pla.height(), |u, v| {
        pla.at(u, v).and_then(|f| ratio(k.fv, f.y))
    });
    let z = Grid::from_fn(axi.width(), axi.height(), |u, v| {
        axi.at(u, v).and_then(|f| {
            let d = Vector2::new(u as f64 - k.u0, v as f64 - k.v0);
            ratio(-d.dot(&(f + d)), d.dot(&f))
        })
    });
    let split = |g: Grid<Option<f64>>| (g.map(|c| c.unwrap_or(0.0)), g.map(|c| c.is_some()));
    let (rho_x, valid_x) = split(x);
    let (rho_y, valid_y) = split(y);
    let (rho_z, valid_z) = split(z);
    RatioMaps {
        rho_x,
        rho_y,
        rho_z,
        valid_x,
        valid_y,
        valid_z,
    }
}

/// Closed-form translation from depth and ratios: `E[ẑ / ρ]` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredTranslation {
    /// `None` when the axis has no valid ratio pixel.
    pub components: [Option<f64>; 3],
}

impl RecoveredTranslation {
    pub fn get(&self, axis: Axis) -> Option<f64> {
        self.components[axis.index()]
    }

    pub fn is_complete(&self) -> bool {
        self.components.iter().all(Option::is_some)
    }

    /// The recovered vector with unavailable components set to zero.
    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.components[i].unwrap_or(0.0))
    }
}

fn mean_depth_over_ratio(ratios: &RatioMaps, depth: &DepthMap, axis: Axis) -> Option<f64> {
    let (rho, mask) = ratios.get(axis);
    let mut stats = RunningStats::default();
    for (u, v, &ok) in mask.indexed() {
        if ok {
            stats.push(depth.at(u, v) / rho.get(u, v));
        }
    }
    (stats.count() > 0).then(|| stats.mean())
}

pub fn recover_translation(ratios: &RatioMaps, depth: &DepthMap) -> Result<RecoveredTranslation> {
    if !ratios.valid_x.same_shape(depth.values()) {
        return Err(Error::DimensionMismatch("ratio maps vs depth".into()));
    }
    Ok(RecoveredTranslation {
        components: Axis::ALL.map(|a| mean_depth_over_ratio(ratios, depth, a)),
    })
}

/// Per-axis contribution of a constraint-cycle loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleTerm {
    pub axis: Axis,
    /// `E[|ρ t̂ − ẑ| / ẑ]`
    pub per_pixel: f64,
    /// `|E[ẑ/ρ] − t̂| / |t̂|`
    pub aggregate: f64,
}

/// A constraint-cycle loss with the axes it had to skip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleLoss {
    pub value: f64,
    pub terms: Vec<CycleTerm>,
    /// Axes whose translation is below [`TRANSLATION_EPS`] or whose ratio
    /// mask is empty.
    pub skipped: Vec<Axis>,
}

fn cycle_loss(ratios: &RatioMaps, depth: &DepthMap, axes: &[(Axis, f64)]) -> Result<CycleLoss> {
    if !ratios.valid_x.same_shape(depth.values()) {
        return Err(Error::DimensionMismatch("ratio maps vs depth".into()));
    }
    let mut out = CycleLoss {
        value: 0.0,
        terms: Vec::new(),
        skipped: Vec::new(),
    };
    for &(axis, t) in axes {
        if t.abs() < TRANSLATION_EPS {
            out.skipped.push(axis);
            continue;
        }
        let (rho, mask) = ratios.get(axis);
        let mut residual = RunningStats::default();
        let mut recovered = RunningStats::default();
        for (u, v, &ok) in mask.indexed() {
            if ok {
                let z = depth.at(u, v);
                let r = *rho.get(u, v);
                residual.push((r * t - z).abs() / z);
                recovered.push(z / r);
            }
        }
        if residual.count() == 0 {
            out.skipped.push(axis);
            continue;
        }
        let term = CycleTerm {
            axis,
            per_pixel: residual.mean(),
            aggregate: ((recovered.mean() - t) / t).abs(),
        };
        out.value += term.per_pixel + term.aggregate;
        out.terms.push(term);
    }
    Ok(out)
}

/// Tangential constraint cycle over the x and y ratios.
pub fn loss_tan(ratios: &RatioMaps, depth: &DepthMap, t_xy: &Vector2<f64>) -> Result<CycleLoss> {
    cycle_loss(ratios, depth, &[(Axis::X, t_xy.x), (Axis::Y, t_xy.y)])
}

/// Radial constraint cycle over the z ratio.
pub fn loss_rad(ratios: &RatioMaps, depth: &DepthMap, t_z: f64) -> Result<CycleLoss> {
    cycle_loss(ratios, depth, &[(Axis::Z, t_z)])
}

/// Weights of the total loss and the SSIM/L1 mix of the photometric term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Alignment constraints `L_axi + L_pla`.
    pub lambda1: f64,
    /// Constraint cycles `L_rad + L_tan`.
    pub lambda2: f64,
    /// Local structure refinement (not computed here, always multiplied by 0).
    pub lambda3: f64,
    pub alpha: f64,
}

/// SSIM weight of the photometric loss.
pub const SSIM_ALPHA: f64 = 0.85;

impl LossWeights {
    /// Warm-up: photometric (and local-structure) terms only.
    pub const STAGE1: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.01,
        alpha: SSIM_ALPHA,
    };
    /// Adds the alignment constraints.
    pub const STAGE2: LossWeights = LossWeights {
        lambda1: 0.05,
        lambda2: 0.0,
        lambda3: 0.01,
        alpha: SSIM_ALPHA,
    };
    /// Adds the constraint cycles.
    pub const STAGE3: LossWeights = LossWeights {
        lambda1: 0.05,
        lambda2: 0.1,
        lambda3: 0.01,
        alpha: SSIM_ALPHA,
    };

    pub fn stage(n: u8) -> Option<LossWeights> {
        match n {
            1 => Some(Self::STAGE1),
            2 => Some(Self::STAGE2),
            3 => Some(Self::STAGE3),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .all(|&l| l >= 0.0 && l.is_finite())
            && (0.0..=1.0).contains(&self.alpha);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")))
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STAGE3
    }
}

/// Individual loss values feeding [`total_loss`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pho: f64,
    pub pla: f64,
    pub axi: f64,
    pub tan: f64,
    pub rad: f64,
    pub valid_pixel_count: usize,
    pub skipped_terms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pho: f64,
    pub pla: f64,
    pub axi: f64,
    pub tan: f64,
    pub rad: f64,
    /// Local structure refinement term, not implemented: always 0.
    pub loc: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
    pub skipped_terms: Vec<String>,
}

/// `λ1 (L_axi + L_pla) + λ2 (L_rad + L_tan) + λ3 L_loc + L_pho` with
/// `L_loc = 0`.
pub fn total_loss(c: &LossComponents, weights: &LossWeights) -> LossReport {
    let loc = 0.0;
    LossReport {
        pho: c.pho,
        pla: c.pla,
        axi: c.axi,
        tan: c.tan,
        rad: c.rad,
        loc,
        total: weights.lambda1 * (c.axi + c.pla)
            + weights.lambda2 * (c.rad + c.tan)
            + weights.lambda3 * loc
            + c.pho,
        valid_pixel_count: c.valid_pixel_count,
        skipped_terms: c.skipped_terms.clone(),
    }
}

/// Everything computed for one correspondence set and motion estimate.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub flows: AlignedFlows,
    pub ratios: RatioMaps,
    pub report: LossReport,
}

/// Aligns, builds ratio maps and evaluates every geometric loss for `est`.
/// Undefined alignment losses (e.g. no tangential motion at all) and
/// skipped cycle terms are reported as 0 and listed in `skipped_terms`.
pub fn evaluate(
    corr: &CorrespondenceSet,
    est: &MotionComponents,
    weights: &LossWeights,
    pho: f64,
) -> Result<Evaluation> {
    weights.validate()?;
    let flows = aligned_flows(corr, est)?;
    let k = *corr.intrinsics();
    let mut c = LossComponents {
        pho,
        valid_pixel_count: flows.coplanar.valid.and(&flows.coaxial.valid)?.count(),
        ..Default::default()
    };
    match loss_pla(&flows.coplanar) {
        Ok(x) => c.pla = x,
        Err(Error::UndefinedLoss(_)) => c.skipped_terms.push("pla".into()),
        Err(e) => return Err(e),
    }
    match loss_axi(&flows.coaxial, &k) {
        Ok(x) => c.axi = x,
        Err(Error::UndefinedLoss(_)) => c.skipped_terms.push("axi".into()),
        Err(e) => return Err(e),
    }
    let ratios = ratio_maps(&flows, &k);
    let t = est.translation();
    let tan = loss_tan(&ratios, &corr.depth_t, &Vector2::new(t.x, t.y))?;
    let rad = loss_rad(&ratios, &corr.depth_t, t.z)?;
    c.tan = tan.value;
    c.rad = rad.value;
    for axis in tan.skipped.iter().chain(&rad.skipped) {
        let family = if *axis == Axis::Z { "rad" } else { "tan" };
        c.skipped_terms.push(format!("{family}_{}", axis.name()));
    }
    let report = total_loss(&c, weights);
    Ok(Evaluation {
        flows,
        ratios,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{radial_flow, tangential_flow, FlowKind};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 55.0, 12.0, 7.0, 24, 15).unwrap()
    }

    fn depth() -> DepthMap {
        let k = intrinsics();
        DepthMap::new(
            Grid::from_fn(k.width, k.height, |u, v| 2.0 + 0.1 * u as f64 + 0.05 * v as f64),
            k,
        )
        .unwrap()
    }

    fn flows_for(t: Vector3<f64>) -> AlignedFlows {
        let d = depth();
        AlignedFlows {
            coplanar: tangential_flow(&d, &Vector2::new(t.x, t.y)).with_kind(FlowKind::Coplanar),
            coaxial: radial_flow(&d, t.z).with_kind(FlowKind::Coaxial),
        }
    }

    #[test]
    fn parallel_field_has_zero_pla() {
        let f = flows_for(Vector3::new(0.3, 0.2, 0.5));
        assert!(loss_pla(&f.coplanar).unwrap() < 1e-25);
    }

    #[test]
    fn two_angle_variance() {
        let mut f = FlowField::zeros(4, 1, FlowKind::Coplanar);
        f.vectors.set(0, 0, Vector2::new(1.0, 0.0));
        f.vectors.set(1, 0, Vector2::new(2.0, 0.0));
        f.vectors.set(2, 0, Vector2::new(0.0, 1.0));
        f.vectors.set(3, 0, Vector2::new(0.0, 3.0));
        assert!((loss_pla(&f).unwrap() - FRAC_PI_4 * FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn pla_needs_two_pixels() {
        let mut f = FlowField::zeros(3, 1, FlowKind::Coplanar);
        f.vectors.set(0, 0, Vector2::new(1.0, 0.0));
        assert!(matches!(loss_pla(&f), Err(Error::UndefinedLoss(_))));
    }

    #[test]
    fn axi_zero_for_radial_and_half_pi_for_perpendicular() {
        let k = intrinsics();
        let outward = flows_for(Vector3::new(0.0, 0.0, -0.4));
        assert!(loss_axi(&outward.coaxial, &k).unwrap() < 1e-15);
        let inward = flows_for(Vector3::new(0.0, 0.0, 0.4));
        assert!(loss_axi(&inward.coaxial, &k).unwrap() < 1e-15);
        let mut perp = FlowField::zeros(k.width, k.height, FlowKind::Coaxial);
        for (u, v, x) in perp.vectors.as_mut_slice().iter_mut().enumerate().map(|(i, x)| (i % k.width, i / k.width, x)) {
            let d = Vector2::new(u as f64 - k.u0, v as f64 - k.v0);
            *x = Vector2::new(-d.y, d.x);
        }
        assert!((loss_axi(&perp, &k).unwrap() - FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn axi_without_usable_pixels_is_undefined() {
        let k = intrinsics();
        let f = FlowField::zeros(k.width, k.height, FlowKind::Coaxial);
        assert!(matches!(loss_axi(&f, &k), Err(Error::UndefinedLoss(_))));
    }

    #[test]
    fn antiparallel_fold() {
        // arccos folds ±θ: flows at +30° and −30° give the same angle.
        let mut f = FlowField::zeros(2, 1, FlowKind::Coplanar);
        let a = 30f64.to_radians();
        f.vectors.set(0, 0, Vector2::new(a.cos(), a.sin()));
        f.vectors.set(1, 0, Vector2::new(a.cos(), -a.sin()));
        assert!(loss_pla(&f).unwrap() < 1e-30);
        f.vectors.set(1, 0, Vector2::new(-a.cos(), -a.sin()));
        let expected = ((PI - a) - a) / 2.0;
        assert!((loss_pla(&f).unwrap() - expected * expected).abs() < 1e-14);
    }

    #[test]
    fn ratios_recover_depth_for_pure_flows() {
        let t = Vector3::new(0.3, -0.2, 0.4);
        let r = ratio_maps(&flows_for(t), &intrinsics());
        let d = depth();
        for axis in Axis::ALL {
            let (rho, mask) = r.get(axis);
            for (u, v, &ok) in mask.indexed() {
                if ok {
                    let z = rho.get(u, v) * t[axis.index()];
                    assert!((z - d.at(u, v)).abs() / d.at(u, v) < 1e-12);
                }
            }
        }
        // Principal point: radial denominator is zero.
        assert!(!r.valid_z.get(12, 7));
        let rec = recover_translation(&r, &d).unwrap();
        assert!((rec.vector() - t).norm() < 1e-12);
    }

    #[test]
    fn constant_plane_tangential_ratio_is_constant() {
        let k = intrinsics();
        let d = DepthMap::constant(k, 4.0).unwrap();
        let flows = AlignedFlows {
            coplanar: tangential_flow(&d, &Vector2::new(0.5, 0.25)),
            coaxial: radial_flow(&d, 0.0),
        };
        let r = ratio_maps(&flows, &k);
        assert_eq!(r.valid_x.count(), k.width * k.height);
        assert!(r.rho_x.as_slice().iter().all(|&x| (x - 8.0).abs() < 1e-12));
        assert_eq!(r.valid_z.count(), 0);
        let rec = recover_translation(&r, &d).unwrap();
        assert_eq!(rec.get(Axis::Z), None);
    }

    #[test]
    fn recovered_translation_scales_with_depth() {
        let t = Vector3::new(0.3, -0.2, 0.4);
        let r = ratio_maps(&flows_for(t), &intrinsics());
        let rec = recover_translation(&r, &depth().scaled(3.0).unwrap()).unwrap();
        assert!((rec.vector() - 3.0 * t).norm() < 1e-12);
    }

    #[test]
    fn cycle_losses_symbolic_values() {
        let t = Vector3::new(0.3, -0.2, 0.4);
        let r = ratio_maps(&flows_for(t), &intrinsics());
        let d = depth();
        let exact = loss_tan(&r, &d, &Vector2::new(t.x, t.y)).unwrap();
        assert!(exact.value < 1e-12);
        assert!(loss_rad(&r, &d, t.z).unwrap().value < 1e-12);

        let doubled = d.scaled(2.0).unwrap();
        let lt = loss_tan(&r, &doubled, &Vector2::new(t.x, t.y)).unwrap();
        assert_eq!(lt.terms.len(), 2);
        for term in &lt.terms {
            assert!((term.per_pixel - 0.5).abs() < 1e-12);
            assert!((term.aggregate - 1.0).abs() < 1e-12);
        }
        assert!((lt.value - 3.0).abs() < 1e-12);

        let lr = loss_rad(&r, &d, 2.0 * t.z).unwrap();
        assert!((lr.terms[0].per_pixel - 1.0).abs() < 1e-12);
        assert!((lr.terms[0].aggregate - 0.5).abs() < 1e-12);
        assert!((lr.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn small_translation_terms_skipped() {
        let t = Vector3::new(0.3, -0.2, 0.4);
        let r = ratio_maps(&flows_for(t), &intrinsics());
        let lt = loss_tan(&r, &depth(), &Vector2::new(0.3, 5e-5)).unwrap();
        assert_eq!(lt.skipped, vec![Axis::Y]);
        assert_eq!(lt.terms.len(), 1);
    }

    #[test]
    fn total_loss_arithmetic() {
        let zero = total_loss(&LossComponents::default(), &LossWeights::STAGE3);
        assert_eq!(zero.total, 0.0);
        let c = LossComponents {
            pho: 0.2,
            pla: 1.0,
            axi: 1.0,
            tan: 1.0,
            rad: 1.0,
            ..Default::default()
        };
        let r = total_loss(&c, &LossWeights::STAGE3);
        assert!((r.total - 0.5).abs() < 1e-15);
        assert_eq!(r.loc, 0.0);
    }

    #[test]
    fn report_json_keys() {
        let r = total_loss(&LossComponents::default(), &LossWeights::STAGE2);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["pho", "pla", "axi", "tan", "rad", "total", "valid_pixel_count"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
