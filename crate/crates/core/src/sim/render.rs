//! Pair generation: exact per-pixel correspondences, a source-view depth
//! map rendered from the target surface, and occlusion masking.
//!
//! The target depth map is treated as a triangle mesh: vertices at pixel
//! centres, two triangles per pixel quad split along the `(u+1, v)`–
//! `(u, v+1)` diagonal. Over a planar triangle inverse depth is affine in
//! screen coordinates, so interpolating `1/z` barycentrically in either
//! view describes the same surface.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::alignment::{CorrespondenceSet, MaskedDepth};
use crate::error::{Error, Result};
use crate::flow::{DepthMap, FlowField, FlowKind, DENOM_EPS};
use crate::geometry::{check_rotation, CameraIntrinsics, SE3Pose};
use crate::grid::{Grid, Mask};

/// Relative inverse-depth margin before a surface counts as in front.
const DEPTH_TIE_TOL: f64 = 1e-6;
/// Minimum share of target pixels that must stay visible.
const MIN_VISIBILITY: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct SimulatedPair {
    pub corr: CorrespondenceSet,
    /// Source→target flow from the rendered source depth.
    pub flow_st: FlowField,
    /// Ground-truth motion (target points into the source frame).
    pub motion: SE3Pose,
    /// Source pixels hit by the rendered surface. The rest of `depth_s`
    /// holds the farthest rendered depth as filler.
    pub covered: Mask,
}

/// Slack for projections that land on the border up to rounding.
const BORDER_TOL: f64 = 1e-9;

fn in_bounds(p: &Vector2<f64>, w: usize, h: usize) -> bool {
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    p.x >= -BORDER_TOL && p.y >= -BORDER_TOL && p.x <= wf + BORDER_TOL && p.y <= hf + BORDER_TOL
}

fn project(k: &CameraIntrinsics, x: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(k.fu * x.x / x.z + k.u0, k.fv * x.y / x.z + k.v0)
}

fn unproject(k: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Vector3<f64> {
    Vector3::new((u - k.u0) / k.fu * z, (v - k.v0) / k.fv * z, z)
}

/// Barycentric coordinates of `p` in triangle `a b c`, `None` when the
/// triangle is degenerate.
fn barycentric(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> Option<[f64; 3]> {
    let area = (b - a).perp(&(c - a));
    if area.abs() < 1e-14 {
        return None;
    }
    let l1 = (c - b).perp(&(p - b)) / area;
    let l2 = (a - c).perp(&(p - c)) / area;
    Some([l1, l2, 1.0 - l1 - l2])
}

struct Triangle {
    vertices: [usize; 3],
    screen: [Vector2<f64>; 3],
    inv_depth: [f64; 3],
}

impl Triangle {
    fn inv_depth_at(&self, p: &Vector2<f64>) -> Option<f64> {
        let [a, b, c] = &self.screen;
        let l = barycentric(p, a, b, c)?;
        if l.iter().all(|&x| x >= -1e-12) {
            Some(l[0] * self.inv_depth[0] + l[1] * self.inv_depth[1] + l[2] * self.inv_depth[2])
        } else {
            None
        }
    }

    /// Inclusive range of integer cells `floor(x)` overlapped, clamped to
    /// the image.
    fn cell_range(&self, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
        let xs = self.screen.map(|p| p.x);
        let ys = self.screen.map(|p| p.y);
        let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
        if x1 < 0.0 || y1 < 0.0 || x0 > wf || y0 > hf {
            return None;
        }
        let c = |x: f64, hi: f64| x.clamp(0.0, hi).floor() as usize;
        Some((c(x0, wf), c(x1, wf), c(y0, hf), c(y1, hf)))
    }
}

/// Mesh triangles whose three vertices are in front of the source camera.
fn mesh_triangles(w: usize, h: usize, projected: &Grid<Option<(Vector2<f64>, f64)>>) -> Vec<Triangle> {
    let mut tris = Vec::with_capacity(2 * w * h);
    let idx = |u: usize, v: usize| v * w + u;
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            for corners in [
                [(u, v), (u + 1, v), (u, v + 1)],
                [(u + 1, v), (u + 1, v + 1), (u, v + 1)],
            ] {
                let data = corners.map(|(a, b)| *projected.get(a, b));
                if let [Some(p0), Some(p1), Some(p2)] = data {
                    tris.push(Triangle {
                        vertices: corners.map(|(a, b)| idx(a, b)),
                        screen: [p0.0, p1.0, p2.0],
                        inv_depth: [1.0 / p0.1, 1.0 / p1.1, 1.0 / p2.1],
                    });
                }
            }
        }
    }
    tris
}

/// Triangles bucketed by the source cells their bounding boxes overlap.
struct Buckets {
    offsets: Vec<usize>,
    items: Vec<usize>,
    width: usize,
}

impl Buckets {
    fn new(tris: &[Triangle], w: usize, h: usize) -> Self {
        let mut counts = vec![0usize; w * h + 1];
        let ranges: Vec<_> = tris.iter().map(|t| t.cell_range(w, h)).collect();
        for (x0, x1, y0, y1) in ranges.iter().flatten() {
            for y in *y0..=*y1 {
                for x in *x0..=*x1 {
                    counts[y * w + x + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; counts[w * h]];
        for (ti, r) in ranges.iter().enumerate() {
            if let Some((x0, x1, y0, y1)) = r {
                for y in *y0..=*y1 {
                    for x in *x0..=*x1 {
                        items[fill[y * w + x]] = ti;
                        fill[y * w + x] += 1;
                    }
                }
            }
        }
        Buckets {
            offsets: counts,
            items,
            width: w,
        }
    }

    fn get(&self, x: usize, y: usize) -> &[usize] {
        let c = y * self.width + x;
        &self.items[self.offsets[c]..self.offsets[c + 1]]
    }
}

/// Renders a pair from target depth and the motion taking target points
/// into the source frame.
///
/// Flow comes from an explicit per-pixel back-project, transform and
/// project. The mask keeps pixels that land in front of the source camera,
/// inside `[0, W−1] × [0, H−1]`, and are not hidden behind another part of
/// the surface.
pub fn generate_pair(depth_t: &DepthMap, motion: &SE3Pose) -> Result<SimulatedPair> {
    check_rotation(motion.rotation())?;
    let k = *depth_t.intrinsics();
    let (w, h) = (depth_t.width(), depth_t.height());
    let (r, t) = (motion.rotation(), motion.translation());

    // Works on normalized rays so that identity motion gives exactly zero
    // flow and pure rotation gives depth-independent flow bit for bit.
    let projected: Grid<Option<(Vector2<f64>, f64)>> = Grid::par_from_fn(w, h, |u, v| {
        let z = depth_t.at(u, v);
        let ray = unproject(&k, u as f64, v as f64, 1.0);
        let xs = r * ray + t / z;
        let zs = z * xs.z;
        (zs > DENOM_EPS).then(|| {
            let flow = Vector2::new(k.fu * (xs.x / xs.z - ray.x), k.fv * (xs.y / xs.z - ray.y));
            (Vector2::new(u as f64, v as f64) + flow, zs)
        })
    });

    let tris = mesh_triangles(w, h, &projected);
    let buckets = Buckets::new(&tris, w, h);

    // z-buffer over source pixel centres, keeping the largest inverse depth.
    let zbuf: Grid<Option<f64>> = Grid::par_from_fn(w, h, |x, y| {
        let p = Vector2::new(x as f64, y as f64);
        buckets
            .get(x, y)
            .iter()
            .filter_map(|&ti| tris[ti].inv_depth_at(&p))
            .fold(None, |best: Option<f64>, d| Some(best.map_or(d, |b| b.max(d))))
    });
    let covered = zbuf.map(|c| c.is_some());
    let farthest = zbuf
        .as_slice()
        .iter()
        .flatten()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if !farthest.is_finite() {
        return Err(Error::DegenerateMotion("the surface is not visible from the source view".into()));
    }
    let depth_s = DepthMap::new(zbuf.map(|c| 1.0 / c.unwrap_or(farthest)), k)?;

    let valid: Mask = Grid::par_from_fn(w, h, |u, v| {
        let Some((ps, zs)) = projected.get(u, v) else {
            return false;
        };
        if !in_bounds(ps, w, h) {
            return false;
        }
        let me = v * w + u;
        let inv = 1.0 / zs;
        let (cx, cy) = (ps.x.max(0.0).floor() as usize, ps.y.max(0.0).floor() as usize);
        !buckets.get(cx.min(w - 1), cy.min(h - 1)).iter().any(|&ti| {
            let tri = &tris[ti];
            !tri.vertices.contains(&me)
                && tri
                    .inv_depth_at(ps)
                    .is_some_and(|d| d > inv * (1.0 + DEPTH_TIE_TOL))
        })
    });
    let visible = valid.count() as f64 / (w * h) as f64;
    if visible < MIN_VISIBILITY {
        return Err(Error::DegenerateMotion(format!(
            "only {:.1}% of target pixels remain visible",
            100.0 * visible
        )));
    }

    let flow = FlowField::new(
        Grid::from_fn(w, h, |u, v| {
            projected
                .get(u, v)
                .map_or(Vector2::zeros(), |(ps, _)| ps - Vector2::new(u as f64, v as f64))
        }),
        projected.map(|c| c.is_some()),
        FlowKind::Optical,
    )?;
    let aligned = MaskedDepth {
        values: projected.map(|c| c.map_or(0.0, |(_, z)| z)),
        valid: valid.clone(),
    };

    let r_inv = r.transpose();
    let flow_st = FlowField::from_pixels(w, h, FlowKind::Optical, |x, y| {
        if !*covered.get(x, y) {
            return None;
        }
        let xt = r_inv * (unproject(&k, x as f64, y as f64, depth_s.at(x, y)) - t);
        if xt.z <= DENOM_EPS {
            return None;
        }
        let pt = project(&k, &xt);
        in_bounds(&pt, w, h).then(|| pt - Vector2::new(x as f64, y as f64))
    });

    let corr = CorrespondenceSet::new(flow, depth_t.clone(), depth_s, Some(valid))?
        .with_aligned_source_depth(aligned)?;
    Ok(SimulatedPair {
        corr,
        flow_st,
        motion: *motion,
        covered,
    })
}

/// Depth of the target mesh at a fractional pixel position, interpolating
/// inverse depth within the containing triangle.
pub fn target_mesh_depth(depth_t: &DepthMap, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (depth_t.width(), depth_t.height());
    if w < 2 || h < 2 || !in_bounds(&Vector2::new(x, y), w, h) {
        return None;
    }
    let u = (x.floor() as usize).min(w - 2);
    let v = (y.floor() as usize).min(h - 2);
    let (a, b) = (x - u as f64, y - v as f64);
    let inv = |du: usize, dv: usize| 1.0 / depth_t.at(u + du, v + dv);
    let d = if a + b <= 1.0 {
        (1.0 - a - b) * inv(0, 0) + a * inv(1, 0) + b * inv(0, 1)
    } else {
        (1.0 - b) * inv(1, 0) + (a + b - 1.0) * inv(1, 1) + (1.0 - a) * inv(0, 1)
    };
    Some(1.0 / d)
}

/// Adds isotropic Gaussian noise (`sigma` pixels) to every valid flow
/// vector, in raster order from `seed`. The exact aligned source depth is
/// dropped, so downstream steps fall back to warping `depth_s`.
pub fn add_flow_noise(corr: &CorrespondenceSet, sigma: f64, seed: u64) -> Result<CorrespondenceSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma {sigma} must be non-negative")));
    }
    let mut out = corr.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flow = &mut out.flow_ts;
    for (f, &ok) in flow.vectors.as_mut_slice().iter_mut().zip(flow.valid.as_slice()) {
        if ok {
            f.x += normal.sample(&mut rng);
            f.y += normal.sample(&mut rng);
        }
    }
    out.flow_ts.kind = FlowKind::Optical;
    out.aligned_source_depth = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::rigid_flow;
    use crate::sim::{generate_scene, SceneKind, SceneSpec};

    fn scene(seed: u64) -> DepthMap {
        let k = CameraIntrinsics::kitti_like(80, 32).unwrap();
        generate_scene(&SceneSpec::new(SceneKind::SmoothRandom, (3.0, 30.0), k, seed).unwrap()).unwrap()
    }

    #[test]
    fn identity_motion() {
        let d = scene(1);
        let pair = generate_pair(&d, &SE3Pose::identity()).unwrap();
        assert_eq!(pair.corr.valid.count(), 80 * 32);
        assert!(pair.corr.flow_ts.vectors.as_slice().iter().all(|f| f.norm() == 0.0));
        assert!(d.values().as_slice().iter().zip(pair.corr.depth_s.values().as_slice()).all(|(a, b)| (a - b).abs() < 1e-12 * a));
    }

    #[test]
    fn flow_equals_rigid_flow() {
        let d = scene(2);
        let pose = SE3Pose::from_parts(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.2, -0.1, 0.7)).unwrap();
        let pair = generate_pair(&d, &pose).unwrap();
        let rigid = rigid_flow(&d, &pose).unwrap();
        assert!(pair.corr.flow_ts.max_abs_diff(&rigid) < 1e-9);
    }

    #[test]
    fn forward_backward_round_trip() {
        let d = scene(3);
        let pose = SE3Pose::from_parts(Vector3::new(0.0, 0.03, 0.0), Vector3::new(0.3, 0.0, 0.5)).unwrap();
        let pair = generate_pair(&d, &pose).unwrap();
        let mut checked = 0;
        for (x, y, f) in pair.flow_st.valid_vectors() {
            let pt = Vector2::new(x as f64, y as f64) + f;
            let z = target_mesh_depth(&d, pt.x, pt.y).unwrap();
            let k = d.intrinsics();
            let back = project(k, &(pose.rotation() * unproject(k, pt.x, pt.y, z) + pose.translation()));
            assert!((back - Vector2::new(x as f64, y as f64)).norm() < 1e-6);
            checked += 1;
        }
        assert!(checked > 80 * 32 / 2);
    }

    #[test]
    fn fold_over_is_occluded() {
        // A near box in front of a far wall; moving sideways hides part of
        // the wall behind the box.
        let k = CameraIntrinsics::kitti_like(64, 24).unwrap();
        let d = DepthMap::new(Grid::from_fn(64, 24, |u, _| if (28..36).contains(&u) { 2.0 } else { 40.0 }), k).unwrap();
        let pose = SE3Pose::from_translation(Vector3::new(0.3, 0.0, 0.0)).unwrap();
        let pair = generate_pair(&d, &pose).unwrap();
        let occluded = (0..64).filter(|&u| !pair.corr.valid.get(u, 12)).count();
        assert!(occluded > 0);
        // Box pixels are never occluded.
        assert!((28..36).all(|u| *pair.corr.valid.get(u, 12) || pair.corr.flow_ts.at(u, 12).is_some_and(|f| (u as f64 + f.x) > 63.0)));
    }

    #[test]
    fn rotation_flow_ignores_depth() {
        let pose = SE3Pose::from_parts(Vector3::new(0.01, 0.02, -0.01), Vector3::zeros()).unwrap();
        let a = generate_pair(&scene(6), &pose).unwrap();
        let b = generate_pair(&scene(7), &pose).unwrap();
        assert_eq!(a.corr.flow_ts.vectors, b.corr.flow_ts.vectors);
    }

    #[test]
    fn excessive_motion_is_degenerate() {
        let d = scene(4);
        let pose = SE3Pose::from_translation(Vector3::new(50.0, 0.0, 0.0)).unwrap();
        assert!(matches!(generate_pair(&d, &pose), Err(Error::DegenerateMotion(_))));
    }

    #[test]
    fn noise_is_seeded() {
        let d = scene(5);
        let pair = generate_pair(&d, &SE3Pose::from_translation(Vector3::new(0.1, 0.0, 0.3)).unwrap()).unwrap();
        let a = add_flow_noise(&pair.corr, 0.5, 9).unwrap();
        let b = add_flow_noise(&pair.corr, 0.5, 9).unwrap();
        assert_eq!(a.flow_ts.vectors.as_slice(), b.flow_ts.vectors.as_slice());
        assert!(a.aligned_source_depth.is_none());
        let diff = a.flow_ts.max_abs_diff(&pair.corr.flow_ts);
        assert!(diff > 0.1 && diff < 5.0);
    }
}
