//! Alignment losses, ratio maps and translation recovery on a simulated
//! pair, at the true motion and at perturbed estimates.

use egoflow::geometry::{decompose_motion, rotation_from_vector};
use egoflow::losses::{evaluate, recover_translation, LossWeights};
use egoflow::sim::{generate_pair, generate_scene, SceneKind, SceneSpec};
use egoflow::{CameraIntrinsics, Result, SE3Pose};
use nalgebra::Vector3;

fn main() -> Result<()> {
    let k = CameraIntrinsics::kitti_like(320, 96)?;
    let depth = generate_scene(&SceneSpec::new(SceneKind::SmoothRandom, (4.0, 40.0), k, 5)?)?;
    let truth = SE3Pose::from_parts(Vector3::new(-0.01, 0.02, 0.0), Vector3::new(0.2, 0.1, 0.7))?;
    let pair = generate_pair(&depth, &truth)?;

    let candidates = [
        ("truth", truth),
        (
            "rotation +1°",
            SE3Pose::new(
                rotation_from_vector(&Vector3::new(1f64.to_radians(), 0.0, 0.0)) * truth.rotation(),
                *truth.translation(),
            )?,
        ),
        (
            "t_x +10%",
            SE3Pose::new(*truth.rotation(), truth.translation() + Vector3::new(0.02, 0.0, 0.0))?,
        ),
        (
            "t_z +10%",
            SE3Pose::new(*truth.rotation(), truth.translation() + Vector3::new(0.0, 0.0, 0.07))?,
        ),
    ];
    println!("{:<14} {:>11} {:>11} {:>11} {:>11}", "estimate", "pla", "axi", "tan", "rad");
    for (name, pose) in candidates {
        let ev = evaluate(&pair.corr, &decompose_motion(&pose)?, &LossWeights::STAGE3, 0.0)?;
        let r = &ev.report;
        println!("{name:<14} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}", r.pla, r.axi, r.tan, r.rad);
    }

    let ev = evaluate(&pair.corr, &decompose_motion(&truth)?, &LossWeights::STAGE3, 0.0)?;
    let rec = recover_translation(&ev.ratios, &pair.corr.depth_t)?;
    println!("recovered translation {:?}", rec.vector().as_slice());
    println!("true translation      {:?}", truth.translation().as_slice());
    Ok(())
}
