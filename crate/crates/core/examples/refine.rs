//! Refine a perturbed motion estimate by minimizing the alignment losses,
//! then recover the translation in closed form from the refined rotation.

use egoflow::geometry::{rotation_angle_between, rotation_from_vector};
use egoflow::refine::{recover_translation_closed_form, refine_pose, RefineConfig};
use egoflow::sim::{generate_pair, generate_scene, MotionKind, MotionSpec, SceneKind, SceneSpec};
use egoflow::{CameraIntrinsics, Result, SE3Pose};
use nalgebra::Vector3;

fn main() -> Result<()> {
    let k = CameraIntrinsics::kitti_like(320, 96)?;
    let depth = generate_scene(&SceneSpec::new(SceneKind::SmoothRandom, (4.0, 40.0), k, 11)?)?;
    let truth = MotionSpec::random(MotionKind::Mixed, 11).sample(1)?;
    let pair = generate_pair(&depth, &truth)?;

    // 2° about a tilted axis and a 10% translation error.
    let axis = Vector3::new(1.0, 2.0, -1.0).normalize();
    let t = truth.translation();
    let init = SE3Pose::new(
        rotation_from_vector(&(axis * 2f64.to_radians())) * truth.rotation(),
        t + Vector3::new(0.0, 1.0, 0.0) * 0.1 * t.norm(),
    )?;
    let trace = refine_pose(&pair.corr, &init, &RefineConfig::for_init(&init))?;
    for r in &trace.records {
        println!(
            "iter {:>3}  pla {:.3e}  axi {:.3e}  objective {:.3e}",
            r.iteration, r.loss_pla, r.loss_axi, r.objective
        );
    }
    let fin = trace.final_pose;
    println!(
        "rotation error {:.2e}°, converged {}",
        rotation_angle_between(fin.rotation(), truth.rotation()).to_degrees(),
        trace.converged
    );
    let rec = recover_translation_closed_form(&pair.corr, fin.rotation(), &pair.corr.depth_t)?;
    println!("closed-form translation {:?}", rec.vector().as_slice());
    println!("true translation        {:?}", t.as_slice());
    Ok(())
}
