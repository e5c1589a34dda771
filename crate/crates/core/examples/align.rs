//! Turn an optical flow into the coplanar and coaxial flows for a motion
//! estimate. At the true motion they are exactly the tangential and radial
//! flows; a rotation error leaves a visible residual.

use egoflow::alignment::aligned_flows;
use egoflow::flow::{radial_flow, tangential_flow};
use egoflow::geometry::decompose_motion;
use egoflow::sim::{generate_pair, generate_scene, SceneKind, SceneSpec};
use egoflow::{CameraIntrinsics, Result, SE3Pose};
use nalgebra::{Vector2, Vector3};

fn main() -> Result<()> {
    let k = CameraIntrinsics::kitti_like(320, 96)?;
    let depth = generate_scene(&SceneSpec::new(SceneKind::SmoothRandom, (4.0, 40.0), k, 3)?)?;
    let truth = SE3Pose::from_parts(Vector3::new(0.01, 0.015, -0.005), Vector3::new(0.25, -0.08, 0.9))?;
    let pair = generate_pair(&depth, &truth)?;
    println!("valid correspondences: {}", pair.corr.valid.count());

    let t = truth.translation();
    let flows = aligned_flows(&pair.corr, &decompose_motion(&truth)?)?;
    let tan = tangential_flow(&depth, &Vector2::new(t.x, t.y));
    let rad = radial_flow(&depth, t.z);
    let residual = |f: &egoflow::flow::FlowField, g: &egoflow::flow::FlowField| {
        f.valid_vectors()
            .map(|(u, v, x)| (x - g.at(u, v).unwrap_or(x)).norm())
            .fold(0.0, f64::max)
    };
    println!("truth:  coplanar − tangential {:.2e} px, coaxial − radial {:.2e} px",
        residual(&flows.coplanar, &tan), residual(&flows.coaxial, &rad));

    let off = SE3Pose::new(
        egoflow::geometry::rotation_from_vector(&Vector3::new(0.0, 1f64.to_radians(), 0.0)) * truth.rotation(),
        *t,
    )?;
    let flows = aligned_flows(&pair.corr, &decompose_motion(&off)?)?;
    println!("1° yaw: coplanar − tangential {:.2} px, coaxial − radial {:.2} px",
        residual(&flows.coplanar, &tan), residual(&flows.coaxial, &rad));
    Ok(())
}
