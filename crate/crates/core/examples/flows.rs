//! The three flow families on one depth map: rotational flow ignores
//! depth, tangential flow is parallel everywhere, radial flow points
//! through the principal point. Their composition is the rigid flow.

use egoflow::flow::{radial_flow, rigid_flow, rotational_flow, tangential_flow, translational_flow, DepthMap};
use egoflow::geometry::rotation_from_vector;
use egoflow::sim::{generate_scene, SceneKind, SceneSpec};
use egoflow::{CameraIntrinsics, Result, SE3Pose};
use nalgebra::{Vector2, Vector3};

fn main() -> Result<()> {
    let k = CameraIntrinsics::kitti_like(640, 192)?;
    let depth: DepthMap = generate_scene(&SceneSpec::new(SceneKind::SmoothRandom, (4.0, 40.0), k, 1)?)?;

    let r = rotation_from_vector(&Vector3::new(0.0, 0.02, 0.0));
    let rot = rotational_flow(&r, &k)?;
    let rot_direct = rigid_flow(&depth, &SE3Pose::from_rotation(r)?)?;
    println!("rotational vs rigid      {:.2e} px", rot.max_abs_diff(&rot_direct));

    let t_xy = Vector2::new(0.3, -0.1);
    let tan = tangential_flow(&depth, &t_xy);
    let first = tan.valid_vectors().next().map(|(_, _, f)| f).unwrap_or_default();
    let worst_cross = tan
        .valid_vectors()
        .map(|(_, _, f)| (f.x * first.y - f.y * first.x).abs())
        .fold(0.0, f64::max);
    println!("tangential max |f × f0|  {worst_cross:.2e}");

    let rad = radial_flow(&depth, 0.8);
    let p0 = k.principal_point();
    let worst_radial = rad
        .valid_vectors()
        .map(|(u, v, f)| {
            let d = Vector2::new(u as f64, v as f64) - p0;
            (f.x * d.y - f.y * d.x).abs()
        })
        .fold(0.0, f64::max);
    println!("radial max |f × (p − p0)| {worst_radial:.2e}");

    let t = Vector3::new(0.3, -0.1, 0.8);
    let trans = translational_flow(&depth, &t);
    let trans_direct = rigid_flow(&depth, &SE3Pose::from_translation(t)?)?;
    println!("translational vs rigid   {:.2e} px", trans.max_abs_diff(&trans_direct));
    Ok(())
}
