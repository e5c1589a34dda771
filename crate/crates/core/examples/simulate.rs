//! Generate a short synthetic sequence and write it as a bundle directory
//! (depth PFMs, `.flo` flows, PGM masks, KITTI poses).
//!
//! `cargo run --release --example simulate -- /tmp/bundle`

use std::path::PathBuf;

use egoflow::sim::{generate_trajectory, write_bundle, BundleInfo, MotionSpec, SceneKind, SceneSpec};
use egoflow::{CameraIntrinsics, Result};

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("egoflow-bundle"));
    let k = CameraIntrinsics::kitti_like(320, 96)?;
    let scene = SceneSpec::new(SceneKind::SmoothRandom, (4.0, 40.0), k, 7)?;
    let motion = MotionSpec::driving(7);
    let n_frames = 5;
    let sim = generate_trajectory(&scene, n_frames, &motion)?;
    for (i, pair) in sim.pairs.iter().enumerate() {
        let visible = pair.corr.valid.count() as f64 / (k.width * k.height) as f64;
        println!("pair {i}: {:.1}% of target pixels visible", 100.0 * visible);
    }
    let end = sim.trajectory.poses().last().expect("nonempty").translation();
    println!("final position {:?}", end.as_slice());
    write_bundle(
        &out,
        &sim,
        &BundleInfo {
            scene,
            motion,
            n_frames,
            noise: None,
        },
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
