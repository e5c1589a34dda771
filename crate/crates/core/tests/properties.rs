//! Randomized invariants over poses, flows and file formats.

use std::path::Path;

use egoflow::eval::{parse_kitti_poses, format_kitti_poses, umeyama_align, Trajectory};
use egoflow::flow::{rigid_flow, translational_flow, rotational_flow, DepthMap, FlowField, FlowKind};
use egoflow::formats::{decode_flo, decode_pfm, decode_pgm_mask, encode_flo, encode_pfm, encode_pgm_mask};
use egoflow::geometry::{decompose_motion, rotation_angle_between, rotation_from_vector, rotation_to_vector};
use egoflow::grid::Grid;
use egoflow::{CameraIntrinsics, SE3Pose};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose(max_angle: f64, max_t: f64) -> impl Strategy<Value = SE3Pose> {
    (vec3(1.0), 0.0..max_angle, vec3(max_t)).prop_map(|(axis, angle, t)| {
        let w = if axis.norm() > 1e-3 { axis.normalize() * angle } else { Vector3::zeros() };
        SE3Pose::new(rotation_from_vector(&w), t).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn compose_with_inverse_is_identity(p in pose(3.0, 20.0)) {
        prop_assert!(p.compose(&p.inverse()).frobenius_distance(&SE3Pose::identity()) < 1e-12);
        prop_assert!(p.inverse().compose(&p).frobenius_distance(&SE3Pose::identity()) < 1e-12);
    }

    #[test]
    fn rotation_vector_round_trip(axis in vec3(1.0), angle in 0.0..3.1f64) {
        prop_assume!(axis.norm() > 1e-3);
        let w = axis.normalize() * angle;
        let back = rotation_to_vector(&rotation_from_vector(&w));
        prop_assert!((back - w).norm() < 1e-9, "{w:?} -> {back:?}");
    }

    #[test]
    fn angle_between_is_symmetric_and_zero_on_self(a in pose(3.0, 1.0), b in pose(3.0, 1.0)) {
        let (ra, rb) = (a.rotation(), b.rotation());
        prop_assert!(rotation_angle_between(ra, ra) < 1e-7);
        prop_assert!((rotation_angle_between(ra, rb) - rotation_angle_between(rb, ra)).abs() < 1e-9);
    }

    #[test]
    fn decomposition_separates_axes(p in pose(1.0, 10.0)) {
        let c = decompose_motion(&p).unwrap();
        prop_assert_eq!(c.tangential().z, 0.0);
        prop_assert_eq!(c.radial().x, 0.0);
        prop_assert_eq!(c.radial().y, 0.0);
        prop_assert!((c.translation() - p.translation()).norm() < 1e-15);
        prop_assert!(c.recompose().frobenius_distance(&p) < 1e-12);
    }

    #[test]
    fn flow_models_match_rigid_flow_on_planes(p in pose(0.05, 1.0), seed in 0u64..1000) {
        let k = CameraIntrinsics::kitti_like(40, 16).unwrap();
        let depth = DepthMap::constant(k, 5.0 + seed as f64 / 100.0).unwrap();
        let t = *p.translation();
        let whole = rigid_flow(&depth, &SE3Pose::from_translation(t).unwrap()).unwrap();
        let parts = translational_flow(&depth, &t);
        prop_assert!(whole.max_abs_diff(&parts) < 1e-9);
        let rot = rotational_flow(p.rotation(), &k).unwrap();
        let direct = rigid_flow(&depth, &SE3Pose::from_rotation(*p.rotation()).unwrap()).unwrap();
        prop_assert!(rot.max_abs_diff(&direct) < 1e-9);
    }

    #[test]
    fn kitti_text_round_trip(steps in prop::collection::vec(pose(0.2, 2.0), 1..20)) {
        let traj = Trajectory::new(steps).unwrap();
        let back = parse_kitti_poses(&format_kitti_poses(&traj), Path::new("t.txt")).unwrap();
        for (a, b) in traj.poses().iter().zip(back.poses()) {
            prop_assert!((a.matrix() - b.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn umeyama_recovers_a_similarity(
        steps in prop::collection::vec(vec3(5.0), 4..30),
        g in pose(3.0, 50.0),
        scale in 0.1..10.0f64,
    ) {
        let positions: Vec<Vector3<f64>> = steps
            .iter()
            .scan(Vector3::zeros(), |acc, s| { *acc += s; Some(*acc) })
            .collect();
        let reference = Trajectory::new(
            positions.iter().map(|p| SE3Pose::from_translation(*p).unwrap()).collect(),
        ).unwrap();
        // estimate = inverse similarity applied to the reference
        let est = Trajectory::new(
            positions
                .iter()
                .map(|p| SE3Pose::from_translation(g.rotation().transpose() * (p - g.translation()) / scale).unwrap())
                .collect(),
        ).unwrap();
        // Collinear or coincident points have no unique rotation.
        let c = positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
        let cov = positions.iter().map(|p| (p - c) * (p - c).transpose()).sum::<nalgebra::Matrix3<f64>>();
        let ev = cov.symmetric_eigenvalues();
        prop_assume!(ev.min() > 1e-3 * ev.max() && ev.max() > 1e-6);
        let sim = umeyama_align(&est, &reference).unwrap();
        prop_assert!((sim.scale - scale).abs() < 1e-8 * scale);
        for (e, r) in est.poses().iter().zip(reference.poses()) {
            prop_assert!((sim.apply(e.translation()) - r.translation()).norm() < 1e-8 * (1.0 + r.translation().norm()));
        }
    }

    #[test]
    fn flo_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 11) as f64 / (1u64 << 53) as f64 };
        let vectors = Grid::from_fn(w, h, |_, _| Vector2::new(next() * 200.0 - 100.0, next() * 200.0 - 100.0));
        let valid = Grid::from_fn(w, h, |u, v| !(u + 2 * v + seed as usize).is_multiple_of(3));
        let flow = FlowField::new(vectors, valid, FlowKind::Optical).unwrap();
        let back = decode_flo(&encode_flo(&flow), Path::new("x.flo"), FlowKind::Optical).unwrap();
        prop_assert_eq!(&back.valid, &flow.valid);
        for (u, v, f) in flow.valid_vectors() {
            let g = back.at(u, v).unwrap();
            prop_assert_eq!(g.x, f.x as f32 as f64);
            prop_assert_eq!(g.y, f.y as f32 as f64);
        }
    }

    #[test]
    fn pfm_and_pgm_round_trip(w in 1usize..12, h in 1usize..12, base in 0.5..100.0f64) {
        let grid = Grid::from_fn(w, h, |u, v| base + u as f64 * 0.25 - v as f64 * 0.125);
        let back = decode_pfm(&encode_pfm(&grid), Path::new("x.pfm")).unwrap();
        prop_assert_eq!(back.width(), w);
        for (u, v, &z) in grid.indexed() {
            prop_assert_eq!(*back.get(u, v), z as f32 as f64);
        }
        let mask = Grid::from_fn(w, h, |u, v| (u * v) % 2 == 0);
        prop_assert_eq!(decode_pgm_mask(&encode_pgm_mask(&mask), Path::new("m.pgm")).unwrap(), mask);
    }
}
