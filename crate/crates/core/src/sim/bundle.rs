//! On-disk scene bundles.
//!
//! ```text
//! bundle.json        scene and motion specs, frame count, noise
//! poses.txt          camera-to-world poses, KITTI layout
//! pair_0000/         one directory per step k = 1.., frame k against k − 1
//!   depth_t.pfm  depth_s.pfm  flow.flo  flow_st.flo  mask.pgm  motion.txt
//!   depth_s_to_t.pfm (noiseless pairs only; invalid pixels hold 0)
//! ```
//!
//! Every file is written atomically and contains no timestamps, so equal
//! inputs give byte-identical bundles.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MotionSpec, SceneSpec, SimulatedTrajectory};
use crate::alignment::{CorrespondenceSet, MaskedDepth};
use crate::error::{Error, Result};
use crate::eval::{format_kitti_poses, kitti_line, parse_kitti_poses};
use crate::flow::{DepthMap, FlowField, FlowKind};
use crate::formats::{encode_flo, encode_pfm, encode_pgm_mask, read_flo, read_pfm, read_pgm_mask, write_atomic};
use crate::geometry::SE3Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowNoise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub scene: SceneSpec,
    pub motion: MotionSpec,
    pub n_frames: usize,
    pub noise: Option<FlowNoise>,
}

/// One step read back from disk.
#[derive(Clone, Debug)]
pub struct BundlePair {
    pub corr: CorrespondenceSet,
    pub flow_st: FlowField,
    pub motion: SE3Pose,
}

pub fn pair_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("pair_{index:04}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_bundle(dir: &Path, sim: &SimulatedTrajectory, info: &BundleInfo) -> Result<()> {
    if sim.pairs.len() + 1 != info.n_frames {
        return Err(Error::InvalidConfig(format!(
            "bundle info declares {} frames but the trajectory has {} pairs",
            info.n_frames,
            sim.pairs.len()
        )));
    }
    create_dir(dir)?;
    let json = serde_json::to_vec_pretty(info)?;
    write_atomic(&dir.join("bundle.json"), &json)?;
    write_atomic(&dir.join("poses.txt"), format_kitti_poses(&sim.trajectory).as_bytes())?;
    for (i, pair) in sim.pairs.iter().enumerate() {
        let pd = pair_dir(dir, i);
        create_dir(&pd)?;
        let corr = &pair.corr;
        write_atomic(&pd.join("depth_t.pfm"), &encode_pfm(corr.depth_t.values()))?;
        write_atomic(&pd.join("depth_s.pfm"), &encode_pfm(corr.depth_s.values()))?;
        write_atomic(&pd.join("flow.flo"), &encode_flo(&corr.flow_ts))?;
        write_atomic(&pd.join("flow_st.flo"), &encode_flo(&pair.flow_st))?;
        write_atomic(&pd.join("mask.pgm"), &encode_pgm_mask(&corr.valid))?;
        write_atomic(&pd.join("motion.txt"), format!("{}\n", kitti_line(&pair.motion)).as_bytes())?;
        if let Some(aligned) = &corr.aligned_source_depth {
            let z = aligned.values.indexed().map(|(u, v, &z)| if *aligned.valid.get(u, v) { z } else { 0.0 });
            let grid = crate::grid::Grid::from_vec(corr.width(), corr.height(), z.collect())?;
            write_atomic(&pd.join("depth_s_to_t.pfm"), &encode_pfm(&grid))?;
        }
    }
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::format(&path, "bundle member is missing"))
    }
}

pub fn read_bundle_info(dir: &Path) -> Result<BundleInfo> {
    let path = require(dir.join("bundle.json"))?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let info: BundleInfo =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    info.scene.validate()?;
    info.motion.validate()?;
    Ok(info)
}

/// Number of pairs in a bundle.
pub fn pair_count(dir: &Path) -> Result<usize> {
    Ok(read_bundle_info(dir)?.n_frames - 1)
}

pub fn read_pair(dir: &Path, index: usize) -> Result<BundlePair> {
    let info = read_bundle_info(dir)?;
    if index + 1 >= info.n_frames {
        return Err(Error::InvalidConfig(format!(
            "pair {index} out of range, the bundle has {} pairs",
            info.n_frames - 1
        )));
    }
    let k = info.scene.intrinsics;
    let pd = pair_dir(dir, index);
    let depth_t = DepthMap::new(read_pfm(&require(pd.join("depth_t.pfm"))?)?, k)?;
    let depth_s = DepthMap::new(read_pfm(&require(pd.join("depth_s.pfm"))?)?, k)?;
    let flow = read_flo(&require(pd.join("flow.flo"))?, FlowKind::Optical)?;
    let flow_st = read_flo(&require(pd.join("flow_st.flo"))?, FlowKind::Optical)?;
    let mask = read_pgm_mask(&require(pd.join("mask.pgm"))?)?;
    let motion_path = require(pd.join("motion.txt"))?;
    let text = fs::read_to_string(&motion_path).map_err(|e| Error::io(&motion_path, e))?;
    let motion = match parse_kitti_poses(&text, &motion_path)?.poses() {
        [pose] => *pose,
        other => {
            return Err(Error::format(
                &motion_path,
                format!("expected one pose, found {}", other.len()),
            ))
        }
    };
    let mut corr = CorrespondenceSet::new(flow, depth_t, depth_s, Some(mask.clone()))?;
    let aligned_path = pd.join("depth_s_to_t.pfm");
    if aligned_path.is_file() {
        let values = read_pfm(&aligned_path)?;
        corr = corr.with_aligned_source_depth(MaskedDepth { values, valid: mask })?;
    }
    Ok(BundlePair {
        corr,
        flow_st,
        motion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::sim::{generate_trajectory, MotionKind, SceneKind};

    #[test]
    fn round_trip() {
        let k = CameraIntrinsics::kitti_like(48, 16).unwrap();
        let scene = SceneSpec::new(SceneKind::SmoothRandom, (4.0, 20.0), k, 2).unwrap();
        let motion = MotionSpec::random(MotionKind::Mixed, 3);
        let sim = generate_trajectory(&scene, 3, &motion).unwrap();
        let info = BundleInfo {
            scene,
            motion,
            n_frames: 3,
            noise: None,
        };
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &sim, &info).unwrap();
        assert_eq!(read_bundle_info(dir.path()).unwrap(), info);
        assert_eq!(pair_count(dir.path()).unwrap(), 2);
        let p = read_pair(dir.path(), 1).unwrap();
        let orig = &sim.pairs[1];
        assert_eq!(p.corr.valid, orig.corr.valid);
        assert!(p.corr.flow_ts.max_abs_diff(&orig.corr.flow_ts) < 1e-4);
        assert!(p.motion.frobenius_distance(&orig.motion) < 1e-9);
        assert!(p.corr.aligned_source_depth.is_some());
        assert!(read_pair(dir.path(), 2).is_err());
    }

    #[test]
    fn missing_member_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_bundle_info(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bundle.json"), "{err}");
    }
}
