//! Deterministic synthetic scenes: depth maps, motions, correspondence
//! pairs and multi-frame trajectories with exact ground truth.

mod bundle;
mod render;

pub use bundle::{pair_count, pair_dir, read_bundle_info, read_pair, write_bundle, BundleInfo, BundlePair, FlowNoise};
pub use render::{add_flow_noise, generate_pair, target_mesh_depth, SimulatedPair};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::flow::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SceneKind {
    /// Fronto-parallel plane at a fixed depth.
    ConstantPlane { depth: f64 },
    /// Plane with a random tilt; inverse depth is linear in the pixel
    /// coordinates.
    SlopedPlane,
    /// Smooth value noise.
    SmoothRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// `(min, max)` depth. Ignored by the constant plane.
    pub depth_range: (f64, f64),
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(
        kind: SceneKind,
        depth_range: (f64, f64),
        intrinsics: CameraIntrinsics,
        seed: u64,
    ) -> Result<Self> {
        let spec = SceneSpec {
            kind,
            depth_range,
            intrinsics,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        match self.kind {
            SceneKind::ConstantPlane { depth } if !(depth > 0.0 && depth.is_finite()) => {
                Err(Error::InvalidConfig(format!("plane depth {depth} must be positive")))
            }
            SceneKind::ConstantPlane { .. } => Ok(()),
            _ => {
                let (lo, hi) = self.depth_range;
                if lo > 0.0 && lo < hi && hi.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "depth range ({lo}, {hi}) must satisfy 0 < min < max"
                    )))
                }
            }
        }
    }

    /// The same scene family with another seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Uniform cubic B-spline basis weights at fractional offset `s ∈ [0, 1)`.
/// Non-negative and summing to 1, so interpolated values stay within the
/// control-value range.
fn bspline_weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        (1.0 - s).powi(3) / 6.0,
        (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
        (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
        s3 / 6.0,
    ]
}

/// Coarse lattice spacing of the smooth-random scenes, pixels.
const NOISE_CELL: f64 = 24.0;

/// Depth map for a scene specification.
pub fn generate_scene(spec: &SceneSpec) -> Result<DepthMap> {
    spec.validate()?;
    let (w, h) = (spec.width(), spec.height());
    let (lo, hi) = spec.depth_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = match spec.kind {
        SceneKind::ConstantPlane { depth } => Grid::filled(w, h, depth),
        SceneKind::SlopedPlane => {
            // inv(x, y) = mid + half (a (2x − 1) + b (2y − 1)), |a| + |b| ≤ 1,
            // keeps 1/z within [1/max, 1/min] over the unit square.
            let (inv_lo, inv_hi) = (1.0 / hi, 1.0 / lo);
            let mid = 0.5 * (inv_lo + inv_hi);
            let half = 0.5 * (inv_hi - inv_lo);
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0) * (1.0 - a.abs());
            let nx = (w.max(2) - 1) as f64;
            let ny = (h.max(2) - 1) as f64;
            Grid::from_fn(w, h, |u, v| {
                let x = 2.0 * u as f64 / nx - 1.0;
                let y = 2.0 * v as f64 / ny - 1.0;
                let inv = mid + half * (a * x + b * y);
                (1.0 / inv).clamp(lo, hi)
            })
        }
        SceneKind::SmoothRandom => {
            let gw = (w as f64 / NOISE_CELL).ceil() as usize + 4;
            let gh = (h as f64 / NOISE_CELL).ceil() as usize + 4;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(0.0..=1.0)).collect();
            Grid::from_fn(w, h, |u, v| {
                let (x, y) = (u as f64 / NOISE_CELL, v as f64 / NOISE_CELL);
                let (ix, iy) = (x.floor() as usize, y.floor() as usize);
                let (wx, wy) = (bspline_weights(x - ix as f64), bspline_weights(y - iy as f64));
                let mut acc = 0.0;
                for (j, wyj) in wy.iter().enumerate() {
                    for (i, wxi) in wx.iter().enumerate() {
                        acc += wyj * wxi * lattice[(iy + j) * gw + ix + i];
                    }
                }
                (lo + (hi - lo) * acc).clamp(lo, hi)
            })
        }
    };
    DepthMap::new(values, spec.intrinsics)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    PureRotation,
    PureTangential,
    PureRadial,
    Mixed,
}

/// Bounds of one motion component's magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRange {
    pub min: f64,
    pub max: f64,
    /// Random sign.
    pub symmetric: bool,
}

impl ComponentRange {
    pub fn fixed(value: f64) -> Self {
        ComponentRange {
            min: value,
            max: value,
            symmetric: false,
        }
    }

    pub fn symmetric(min: f64, max: f64) -> Self {
        ComponentRange {
            min,
            max,
            symmetric: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad component range {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        };
        if self.symmetric && rng.random_bool(0.5) {
            -x
        } else {
            x
        }
    }
}

/// Random per-step motions. Components are the rotation vector
/// `(r_x, r_y, r_z)` in radians and the translation `(t_x, t_y, t_z)`.
/// The kind zeroes components exactly: pure rotation has `t = 0`, pure
/// tangential has `R = I, t_z = 0`, pure radial has `R = I, t_x = t_y = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub rotation: [ComponentRange; 3],
    pub translation: [ComponentRange; 3],
    pub seed: u64,
}

impl MotionSpec {
    /// Small driving-like motions.
    pub fn random(kind: MotionKind, seed: u64) -> Self {
        MotionSpec {
            kind,
            rotation: [ComponentRange::symmetric(0.002, 0.02); 3],
            translation: [
                ComponentRange::symmetric(0.05, 0.3),
                ComponentRange::symmetric(0.05, 0.3),
                ComponentRange::symmetric(0.2, 1.0),
            ],
            seed,
        }
    }

    /// Forward-dominant motions of a road vehicle at roughly 10 Hz: the
    /// camera advances 0.5–1.5 units per step (`t_z > 0` since source points
    /// lie farther away), with small lateral and vertical drift, mostly yaw.
    pub fn driving(seed: u64) -> Self {
        MotionSpec {
            kind: MotionKind::Mixed,
            rotation: [
                ComponentRange::symmetric(0.001, 0.01),
                ComponentRange::symmetric(0.002, 0.03),
                ComponentRange::symmetric(0.001, 0.01),
            ],
            translation: [
                ComponentRange::symmetric(0.02, 0.2),
                ComponentRange::symmetric(0.01, 0.1),
                ComponentRange {
                    min: 0.5,
                    max: 1.5,
                    symmetric: false,
                },
            ],
            seed,
        }
    }

    /// Every step is exactly `pose`, restricted to the kind's components.
    pub fn constant(kind: MotionKind, rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        MotionSpec {
            kind,
            rotation: std::array::from_fn(|i| ComponentRange::fixed(rotation_vector[i])),
            translation: std::array::from_fn(|i| ComponentRange::fixed(translation[i])),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation
            .iter()
            .chain(&self.translation)
            .try_for_each(ComponentRange::validate)
    }

    /// Motion of step `k` (deterministic in `seed` and `k`).
    pub fn sample(&self, k: u64) -> Result<SE3Pose> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(k));
        let w = Vector3::from_fn(|i, _| self.rotation[i].sample(&mut rng));
        let t = Vector3::from_fn(|i, _| self.translation[i].sample(&mut rng));
        let (w, t) = match self.kind {
            MotionKind::PureRotation => (w, Vector3::zeros()),
            MotionKind::PureTangential => (Vector3::zeros(), Vector3::new(t.x, t.y, 0.0)),
            MotionKind::PureRadial => (Vector3::zeros(), Vector3::new(0.0, 0.0, t.z)),
            MotionKind::Mixed => (w, t),
        };
        SE3Pose::from_parts(w, t)
    }
}

/// Camera-to-world poses of a simulated sequence and the pair for each
/// step.
#[derive(Clone, Debug)]
pub struct SimulatedTrajectory {
    pub trajectory: Trajectory,
    /// `pairs[k − 1]` relates frame `k` (target) to frame `k − 1` (source).
    pub pairs: Vec<SimulatedPair>,
}

/// `W_0 = I`, `W_k = W_{k−1} M_k` where `M_k` maps frame `k` points into
/// frame `k − 1`. Step `k` uses scene seed `seed + k` and motion sample `k`.
pub fn generate_trajectory(
    scene: &SceneSpec,
    n_frames: usize,
    motion: &MotionSpec,
) -> Result<SimulatedTrajectory> {
    if n_frames < 2 {
        return Err(Error::InvalidConfig(format!(
            "a trajectory needs at least 2 frames, got {n_frames}"
        )));
    }
    let mut poses = vec![SE3Pose::identity()];
    let mut pairs = Vec::with_capacity(n_frames - 1);
    for k in 1..n_frames as u64 {
        let step = motion.sample(k)?;
        let depth = generate_scene(&scene.with_seed(scene.seed.wrapping_add(k)))?;
        pairs.push(generate_pair(&depth, &step)?);
        let last = *poses.last().expect("nonempty");
        poses.push(last.compose(&step));
    }
    Ok(SimulatedTrajectory {
        trajectory: Trajectory::new(poses)?,
        pairs,
    })
}
