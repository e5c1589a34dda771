//! Factor a camera motion into rotation, tangential and radial parts and
//! compare the deviation transforms left by an imperfect estimate.

use egoflow::geometry::{decompose_motion, deviation_closed_form, deviation_transforms, rotation_to_vector};
use egoflow::{Result, SE3Pose};
use nalgebra::Vector3;

fn main() -> Result<()> {
    let truth = SE3Pose::from_parts(Vector3::new(0.01, -0.03, 0.002), Vector3::new(0.2, -0.05, 0.9))?;
    let parts = decompose_motion(&truth)?;
    println!("rotation vector  {:?}", rotation_to_vector(parts.rotation()).as_slice());
    println!("tangential       {:?}", parts.tangential().as_slice());
    println!("radial           {:?}", parts.radial().as_slice());
    println!(
        "recompose error  {:.2e}",
        parts.recompose().frobenius_distance(&truth)
    );

    // An estimate that is 1 degree off in yaw and 10% short on t_z.
    let est_pose = SE3Pose::from_parts(
        Vector3::new(0.01, -0.03 + 1f64.to_radians(), 0.002),
        Vector3::new(0.2, -0.05, 0.81),
    )?;
    let est = decompose_motion(&est_pose)?;
    let by_definition = deviation_transforms(&truth, &est)?;
    let closed = deviation_closed_form(&truth, &est)?;
    println!(
        "radial deviation translation      {:?}",
        by_definition.delta_rad.translation().as_slice()
    );
    println!(
        "tangential deviation translation  {:?}",
        by_definition.delta_tan.translation().as_slice()
    );
    println!(
        "definition vs closed form         {:.2e}",
        by_definition
            .delta_rad
            .frobenius_distance(&closed.delta_rad)
            .max(by_definition.delta_tan.frobenius_distance(&closed.delta_tan))
    );
    Ok(())
}
