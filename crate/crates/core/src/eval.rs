//! Trajectory metrics and pose-file interchange.
//!
//! Trajectories hold camera-to-world poses. ATE is the position RMSE after
//! a least-squares similarity alignment (Umeyama). The relative errors
//! follow the KITTI odometry protocol over path lengths of 100 to 800 m.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::geometry::{orthonormalize, rotation_angle_between, SE3Pose};

/// Maximum deviation from orthonormality accepted when reading pose files.
pub const POSE_FILE_ORTHONORMAL_TOL: f64 = 1e-3;
/// Subsequence lengths of the relative error protocol, meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Ordered camera-to-world poses with optional timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<SE3Pose>,
    timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(poses: Vec<SE3Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidConfig("trajectory has no poses".into()));
        }
        Ok(Trajectory {
            poses,
            timestamps: None,
        })
    }

    pub fn with_timestamps(poses: Vec<SE3Pose>, timestamps: Vec<f64>) -> Result<Self> {
        let mut traj = Self::new(poses)?;
        if timestamps.len() != traj.poses.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                traj.poses.len()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("timestamps must increase strictly".into()));
        }
        traj.timestamps = Some(timestamps);
        Ok(traj)
    }

    pub fn poses(&self) -> &[SE3Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    /// Cumulative travelled distance at each pose.
    pub fn distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(acc);
        for w in self.poses.windows(2) {
            acc += (w[1].translation() - w[0].translation()).norm();
            out.push(acc);
        }
        out
    }

    /// Every pose mapped through `x ↦ s R x + t` (rotations are
    /// left-multiplied by `R`).
    pub fn transformed(&self, sim: &Similarity) -> Result<Trajectory> {
        let poses = self
            .poses
            .iter()
            .map(|p| SE3Pose::new(sim.rotation * p.rotation(), sim.apply(p.translation())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            poses,
            timestamps: self.timestamps.clone(),
        })
    }
}

/// `x ↦ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

fn check_lengths(estimate: &Trajectory, reference: &Trajectory) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} poses, reference has {}",
            estimate.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Least-squares similarity taking estimate positions onto reference
/// positions.
pub fn umeyama_align(estimate: &Trajectory, reference: &Trajectory) -> Result<Similarity> {
    check_lengths(estimate, reference)?;
    if estimate.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need at least 3 poses, got {}",
            estimate.len()
        )));
    }
    let x = estimate.positions();
    let y = reference.positions();
    let n = x.len() as f64;
    let mu_x = x.iter().sum::<Vector3<f64>>() / n;
    let mu_y = y.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (xi, yi) in x.iter().zip(&y) {
        let (dx, dy) = (xi - mu_x, yi - mu_y);
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;

    let spread = |pts: &[Vector3<f64>], mu: &Vector3<f64>| {
        let mut s = Matrix3::zeros();
        for p in pts {
            s += (p - mu) * (p - mu).transpose();
        }
        let mut sv = s.symmetric_eigenvalues().iter().map(|v| v.abs()).collect::<Vec<_>>();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    };
    for (name, pts, mu) in [("estimate", &x, &mu_x), ("reference", &y, &mu_y)] {
        let sv = spread(pts, mu);
        if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateAlignment(format!(
                "{name} positions are collinear or coincident"
            )));
        }
    }

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let d = svd.singular_values;
    let scale = (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x;
    let translation = mu_y - scale * rotation * mu_x;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Position RMSE after similarity alignment.
pub fn ate(estimate: &Trajectory, reference: &Trajectory) -> Result<f64> {
    let sim = umeyama_align(estimate, reference)?;
    Ok(position_rmse(estimate, reference, &sim))
}

/// RMSE between `sim(estimate)` and reference positions.
pub fn position_rmse(estimate: &Trajectory, reference: &Trajectory, sim: &Similarity) -> f64 {
    let sum: f64 = estimate
        .poses
        .iter()
        .zip(&reference.poses)
        .map(|(e, r)| (sim.apply(e.translation()) - r.translation()).norm_squared())
        .sum();
    (sum / estimate.len() as f64).sqrt()
}

/// Error of one subsequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub first_frame: usize,
    pub last_frame: usize,
    pub length: f64,
    /// Translation error per meter.
    pub t_err: f64,
    /// Rotation error, radians per meter.
    pub r_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    /// Mean translation error, percent.
    pub e_t: f64,
    /// Mean rotation error, degrees per 100 m.
    pub e_r: f64,
    pub segments: Vec<SegmentError>,
}

/// KITTI odometry relative errors. Every frame starts a subsequence; the
/// subsequence ends at the first frame whose travelled distance is at
/// least `length` further along the reference.
pub fn kitti_rel_errors(estimate: &Trajectory, reference: &Trajectory) -> Result<RelativeErrors> {
    check_lengths(estimate, reference)?;
    let dist = reference.distances();
    let mut segments = Vec::new();
    for first in 0..reference.len() {
        for &length in &SEGMENT_LENGTHS {
            let target = dist[first] + length;
            let Some(last) = (first..reference.len()).find(|&j| dist[j] >= target) else {
                continue;
            };
            let gt = reference.poses[first].inverse().compose(&reference.poses[last]);
            let est = estimate.poses[first].inverse().compose(&estimate.poses[last]);
            let err = gt.inverse().compose(&est);
            segments.push(SegmentError {
                first_frame: first,
                last_frame: last,
                length,
                t_err: err.translation().norm() / length,
                r_err: rotation_angle_between(err.rotation(), &Matrix3::identity()) / length,
            });
        }
    }
    if segments.is_empty() {
        return Err(Error::NoSegments(format!(
            "reference path is {:.3} m long, shorter than {} m",
            dist.last().copied().unwrap_or(0.0),
            SEGMENT_LENGTHS[0]
        )));
    }
    let n = segments.len() as f64;
    let e_t = segments.iter().map(|s| s.t_err).sum::<f64>() / n * 100.0;
    let e_r = segments.iter().map(|s| s.r_err).sum::<f64>() / n * 100.0 * 180.0 / std::f64::consts::PI;
    Ok(RelativeErrors {
        e_t,
        e_r,
        segments,
    })
}

/// One pose as a row-major `3×4` line of 12 numbers.
pub fn kitti_line(pose: &SE3Pose) -> String {
    let (r, t) = (pose.rotation(), pose.translation());
    let mut s = String::new();
    for i in 0..3 {
        for j in 0..3 {
            write!(s, "{} ", r[(i, j)]).expect("writing to a String");
        }
        write!(s, "{}", t[i]).expect("writing to a String");
        if i < 2 {
            s.push(' ');
        }
    }
    s
}

pub fn format_kitti_poses(traj: &Trajectory) -> String {
    traj.poses.iter().map(|p| kitti_line(p) + "\n").collect()
}

pub fn write_kitti_poses(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, format_kitti_poses(traj).as_bytes())
}

fn parse_numbers(line: &str, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            let x: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                message: format!("not a number: {tok:?}"),
            })?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    message: format!("non-finite value {tok}"),
                })
            }
        })
        .collect()
}

fn pose_from_rotation(r: Matrix3<f64>, t: Vector3<f64>, path: &Path, lineno: usize) -> Result<SE3Pose> {
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if !(err <= POSE_FILE_ORTHONORMAL_TOL) || r.determinant() <= 0.0 {
        return Err(Error::Parse {
            path: path.into(),
            line: lineno,
            message: format!("rotation is not orthonormal (|RᵀR − I| = {err:.3e})"),
        });
    }
    // Project the tolerated error away so the pose meets the strict
    // in-memory invariant.
    let projected = orthonormalize(&r).map_err(|e| Error::Parse {
        path: path.into(),
        line: lineno,
        message: e.to_string(),
    })?;
    SE3Pose::new(projected, t)
}

/// Parses KITTI pose text. Blank lines are skipped; line numbers in errors
/// count every line from 1.
pub fn parse_kitti_poses(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let x = parse_numbers(line, path, lineno)?;
        if x.len() != 12 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                message: format!("expected 12 values, found {}", x.len()),
            });
        }
        let r = Matrix3::new(x[0], x[1], x[2], x[4], x[5], x[6], x[8], x[9], x[10]);
        let t = Vector3::new(x[3], x[7], x[11]);
        poses.push(pose_from_rotation(r, t, path, lineno)?);
    }
    if poses.is_empty() {
        return Err(Error::format(path, "no poses"));
    }
    Trajectory::new(poses)
}

pub fn read_kitti_poses(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_poses(&text, path)
}

/// Parses TUM trajectories: `timestamp tx ty tz qx qy qz qw` per line,
/// `#` starts a comment line.
pub fn parse_tum_poses(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses = Vec::new();
    let mut stamps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let x = parse_numbers(trimmed, path, lineno)?;
        if x.len() != 8 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                message: format!("expected 8 values, found {}", x.len()),
            });
        }
        let q = Quaternion::new(x[7], x[4], x[5], x[6]);
        if !(q.norm() > 1e-9) {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                message: "zero quaternion".into(),
            });
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        poses.push(pose_from_rotation(r, Vector3::new(x[1], x[2], x[3]), path, lineno)?);
        stamps.push(x[0]);
    }
    if poses.is_empty() {
        return Err(Error::format(path, "no poses"));
    }
    Trajectory::with_timestamps(poses, stamps).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_tum_poses(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum_poses(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight(n: usize, step: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| SE3Pose::from_translation(Vector3::new(0.0, 0.0, step * i as f64)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|_| {
                    let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                    let t = Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
                    SE3Pose::from_parts(w, t).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_traj(&mut rng, 20);
        let sim = umeyama_align(&t, &t).unwrap();
        assert!((sim.scale - 1.0).abs() < 1e-12);
        assert!((sim.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(sim.translation.amax() < 1e-10);
        assert!(ate(&t, &t).unwrap() < 1e-10);
    }

    #[test]
    fn recovers_constructed_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = random_traj(&mut rng, 30);
        let truth = Similarity {
            scale: 2.0,
            rotation: rotation_from_vector(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)),
            translation: Vector3::new(1.0, -2.0, 3.0),
        };
        let estimate = reference.transformed(&truth).unwrap();
        // Aligning the estimate back onto the reference inverts `truth`.
        let sim = umeyama_align(&estimate, &reference).unwrap();
        assert!((sim.scale - 0.5).abs() < 1e-12);
        assert!((sim.rotation - truth.rotation.transpose()).amax() < 1e-12);
        assert!(position_rmse(&estimate, &reference, &sim) < 1e-9);
    }

    #[test]
    fn collinear_is_degenerate() {
        let t = straight(10, 1.0);
        assert!(matches!(umeyama_align(&t, &t), Err(Error::DegenerateAlignment(_))));
    }

    #[test]
    fn scale_error_on_straight_path() {
        let reference = straight(1001, 1.0);
        let estimate = straight(1001, 1.05);
        let rel = kitti_rel_errors(&estimate, &reference).unwrap();
        assert!((rel.e_t - 5.0).abs() < 1e-9, "{}", rel.e_t);
        assert!(rel.e_r.abs() < 1e-12);
        let same = kitti_rel_errors(&reference, &reference).unwrap();
        assert_eq!((same.e_t, same.e_r), (0.0, 0.0));
    }

    #[test]
    fn short_path_has_no_segments() {
        let t = straight(50, 1.0);
        assert!(matches!(kitti_rel_errors(&t, &t), Err(Error::NoSegments(_))));
    }

    #[test]
    fn kitti_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_traj(&mut rng, 100);
        let back = parse_kitti_poses(&format_kitti_poses(&t), Path::new("mem")).unwrap();
        for (a, b) in t.poses().iter().zip(back.poses()) {
            assert!((a.matrix() - b.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn kitti_identity_line() {
        let t = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", Path::new("p.txt")).unwrap();
        assert_eq!(t.poses()[0], SE3Pose::identity());
    }

    #[test]
    fn kitti_errors_name_the_line() {
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
        match parse_kitti_poses(text, Path::new("p.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let text = "1 0 0 0 0 1 0 0 0 0 1 nan\n";
        assert!(matches!(parse_kitti_poses(text, Path::new("p")), Err(Error::Parse { line: 1, .. })));
        let text = "1.1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(matches!(parse_kitti_poses(text, Path::new("p")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn tum_reader() {
        let text = "# ts tx ty tz qx qy qz qw\n0.0 1 2 3 0 0 0 1\n0.1 1 2 4 0 0 0.7071067811865476 0.7071067811865476\n";
        let t = parse_tum_poses(text, Path::new("t.txt")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.timestamps().unwrap(), &[0.0, 0.1]);
        let r = t.poses()[1].rotation();
        assert!((r[(1, 0)] - 1.0).abs() < 1e-12);
    }
}
