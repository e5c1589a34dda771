//! Ego-motion as three flows.
//!
//! A camera motion between two frames factors into a rotation, a
//! translation parallel to the image plane (tangential) and a translation
//! along the optical axis (radial). Each produces a flow with its own
//! geometry: rotation is depth independent, tangential flow is parallel
//! everywhere, radial flow points through the principal point. This crate
//! computes those flows, turns an observed optical flow into the flows left
//! after aligning the two cameras' image planes or optical axes, scores the
//! alignment with angular losses, recovers translation from depth ratios,
//! and refines a pose estimate against those losses.
//!
//! | module | contents |
//! |---|---|
//! | [`geometry`] | intrinsics, [`geometry::SE3Pose`], motion factorization, deviation transforms |
//! | [`flow`] | rigid, rotational, tangential and radial flow, flow Jacobians |
//! | [`alignment`] | correspondence sets, aligned (coplanar / coaxial) flows |
//! | [`losses`] | alignment losses, ratio maps, translation recovery, SSIM photometric loss |
//! | [`refine`] | pose refinement and closed-form translation |
//! | [`sim`] | synthetic scenes, rendered image pairs, trajectories, bundles |
//! | [`eval`] | Umeyama alignment, ATE, KITTI relative errors, pose files |
//! | [`formats`] | `.flo`, PFM and PGM codecs |
//! | [`cli`] | the `egoflow` command |
//!
//! Runnable walkthroughs live in `examples/`: `decompose`, `flows`,
//! `align`, `losses`, `refine`, `simulate` and `evaluate`
//! (`cargo run --release --example refine`).

pub mod alignment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod flow;
pub mod formats;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod refine;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, SE3Pose};
