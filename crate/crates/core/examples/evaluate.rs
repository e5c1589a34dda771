//! Trajectory metrics: ATE after 7-DoF alignment and KITTI relative
//! errors, on a drifting estimate of a simulated drive.

use egoflow::eval::{ate, format_kitti_poses, kitti_rel_errors, umeyama_align, Trajectory};
use egoflow::geometry::rotation_from_vector;
use egoflow::sim::MotionSpec;
use egoflow::{Result, SE3Pose};
use nalgebra::Vector3;

fn main() -> Result<()> {
    // 1200 steps of about 1 m each.
    let motion = MotionSpec::driving(3);
    let bias = SE3Pose::from_rotation(rotation_from_vector(&Vector3::new(0.0, 0.0005, 0.0)))?;
    let mut truth = vec![SE3Pose::identity()];
    let mut est = vec![SE3Pose::identity()];
    for k in 1..1200 {
        let step = motion.sample(k)?;
        let t = step.translation() * 1.02;
        let est_step = SE3Pose::new(*step.rotation(), t)?.compose(&bias);
        truth.push(truth[truth.len() - 1].compose(&step));
        est.push(est[est.len() - 1].compose(&est_step));
    }
    let truth = Trajectory::new(truth)?;
    let est = Trajectory::new(est)?;

    let sim = umeyama_align(&est, &truth)?;
    println!("alignment scale {:.4}", sim.scale);
    println!("ATE             {:.3} m", ate(&est, &truth)?);
    let rel = kitti_rel_errors(&est, &truth)?;
    println!("e_t             {:.3} %", rel.e_t);
    println!("e_r             {:.4} deg/100 m", rel.e_r);
    println!("segments        {}", rel.segments.len());
    let text = format_kitti_poses(&est);
    println!("first KITTI line: {}", text.lines().next().unwrap_or_default());
    Ok(())
}
