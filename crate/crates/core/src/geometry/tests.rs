use nalgebra::{Matrix3, Matrix3xX, Rotation3, Vector3};

use super::testutil::{random_pose, random_rotation};
use super::*;
use crate::numerics::{gradcheck, CounterRng, GradcheckOptions, Matrix, ParamKind, ParamStore};

fn unit_cube() -> [Vector3<f64>; 8] {
    canonical_box_corners(&Vector3::new(1.0, 1.0, 1.0))
}

#[test]
fn canonical_cube_has_identity_frame() {
    let f = object_frame_from_corners(&unit_cube()).unwrap();
    assert!(f.origin.norm() < 1e-15);
    assert!((f.axes - Matrix3::identity()).norm() < 1e-15);
}

#[test]
fn rotated_cube_recovers_rotation_and_translation() {
    let mut rng = CounterRng::new(1);
    for _ in 0..20 {
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 100.0;
        let corners = unit_cube().map(|c| r * c + t);
        let f = object_frame_from_corners(&corners).unwrap();
        assert!((f.origin - t).norm() < 1e-9);
        assert!((f.axes - r).norm() < 1e-9);
    }
}

#[test]
fn coincident_corners_are_degenerate() {
    let corners = [Vector3::new(1.0, 2.0, 3.0); 8];
    assert!(matches!(object_frame_from_corners(&corners), Err(crate::Error::DegenerateBox(_))));
    // Collinear edges.
    let mut flat = unit_cube();
    flat[2] = flat[0] + (flat[1] - flat[0]) * 2.0;
    assert!(object_frame_from_corners(&flat).is_err());
}

#[test]
fn frame_is_right_handed_even_for_mirrored_boxes() {
    let mut rng = CounterRng::new(2);
    for _ in 0..50 {
        let r = random_rotation(&mut rng);
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let corners = unit_cube().map(|c| r * mirror * c);
        let f = object_frame_from_corners(&corners).unwrap();
        assert!((f.axes.transpose() * f.axes - Matrix3::identity()).norm() < 1e-9);
        assert!((f.axes.determinant() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn to_object_frame_examples() {
    let mut rng = CounterRng::new(3);
    let f = ObjectFrame { origin: Vector3::new(5.0, -2.0, 40.0), axes: random_rotation(&mut rng) };
    assert!(f.to_object_frame(&f.origin).norm() < 1e-12);
    let id = ObjectFrame::identity();
    assert_eq!(id.to_object_frame(&Vector3::new(1.0, 2.0, 3.0)), Vector3::new(1.0, 2.0, 3.0));
    for _ in 0..100 {
        let p = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 300.0;
        let back = f.to_camera_frame(&f.to_object_frame(&p));
        assert!((back - p).norm() < 1e-9);
    }
}

#[test]
fn cyl_joint_conventions() {
    let j = CylJoint::from_object_point(&Vector3::new(1.0, 0.0, 0.0));
    assert_eq!((j.rho, j.cos_phi, j.sin_phi, j.z), (1.0, 1.0, 0.0, 0.0));
    let j = CylJoint::from_object_point(&Vector3::new(0.0, 0.0, 5.0));
    assert_eq!((j.rho, j.cos_phi, j.sin_phi, j.z), (0.0, 1.0, 0.0, 5.0));
    let j = CylJoint { rho: 3.0, cos_phi: 2.0, sin_phi: 0.0, z: 0.0 };
    assert!((j.to_object_point() - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn decode_of_zeros_is_origin() {
    let h = CylPoseVector::new(vec![0.0; CYL_DIM]).unwrap();
    let pts = cyl_decode(&h, &ObjectFrame::identity()).unwrap();
    assert_eq!(pts, Matrix3xX::zeros(HAND_JOINTS));
    assert!(cyl_decode(&CylPoseVector::new(vec![0.0; 8]).unwrap(), &ObjectFrame::identity()).is_err());
}

#[test]
fn encode_decode_round_trip() {
    let mut rng = CounterRng::new(4);
    for _ in 0..200 {
        let y = random_pose(&mut rng);
        let f = y.frame().unwrap();
        let h = cyl_encode(&y, &f);
        for j in 0..HAND_JOINTS {
            let c = h.joint(j);
            assert!(c.rho >= 0.0);
            assert!((c.cos_phi.powi(2) + c.sin_phi.powi(2) - 1.0).abs() < 1e-9);
        }
        let back = cyl_decode(&h, &f).unwrap();
        for j in 0..HAND_JOINTS {
            let q_back = f.to_object_frame(&back.column(j).into_owned());
            let q = f.to_object_frame(&y.point(j));
            assert!((q_back - q).norm() < 1e-9);
            assert!((back.column(j) - y.point(j)).norm() < 1e-9);
        }
    }
}

#[test]
fn encoding_is_invariant_to_rigid_camera_motion() {
    let mut rng = CounterRng::new(5);
    for _ in 0..150 {
        let y = random_pose(&mut rng);
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 200.0;
        let a = encode_pose(&y).unwrap();
        let b = encode_pose(&y.transformed(&r, &t)).unwrap();
        for (x, z) in a.values().iter().zip(b.values()) {
            assert!((x - z).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }
}

#[test]
fn batch_encoding_matches_scalar_path() {
    let mut rng = CounterRng::new(6);
    let poses: Vec<Pose3D> = (0..5).map(|_| random_pose(&mut rng)).collect();
    let mut flat = Vec::new();
    for p in &poses {
        for i in 0..NUM_POINTS {
            flat.extend(p.point(i).iter());
        }
    }
    let m = Matrix::from_vec(5 * NUM_POINTS, 3, flat).unwrap();
    let out = cyl_encode_batch(&m);
    for (s, p) in poses.iter().enumerate() {
        let h = encode_pose(p).unwrap();
        for (a, b) in out.row(s).iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn batch_encoding_gradients() {
    let mut rng = CounterRng::new(7);
    // Slightly non-rectangular estimated boxes exercise the Gram-Schmidt path.
    let mut flat = Vec::new();
    for _ in 0..2 {
        let p = random_pose(&mut rng);
        for i in 0..NUM_POINTS {
            let jitter = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 3.0;
            flat.extend((p.point(i) + jitter).iter());
        }
    }
    let target = Matrix::from_fn(2, CYL_DIM, |_, _| rng.normal() * 20.0);
    let all = Matrix::from_vec(2 * NUM_POINTS, 3, flat).unwrap();

    let mut store = ParamStore::new();
    let id = store.insert("pts", all.clone(), ParamKind::Trainable).unwrap();
    let t = target.clone();
    let report = gradcheck(
        &mut store,
        &[id],
        move |tape, store| {
            let p = tape.param(store, id);
            let h = tape.cyl_encode(p, true);
            let t = tape.input(t.clone());
            Ok(tape.squared_error(h, t, 1e-3))
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "full chain: {}", report.max_rel_error);

    // With the frame detached, hand joints get the exact gradient for fixed
    // corners, and corners get nothing.
    let mut store = ParamStore::new();
    let hands: Vec<_> = (0..2)
        .map(|s| {
            store.insert(format!("hand{s}"), all.slice_rows(s * NUM_POINTS, HAND_JOINTS), ParamKind::Trainable).unwrap()
        })
        .collect();
    let corners: Vec<Matrix> = (0..2).map(|s| all.slice_rows(s * NUM_POINTS + HAND_JOINTS, BOX_CORNERS)).collect();
    fn program<'a>(
        tape: &mut crate::numerics::Tape<'a>,
        store: &'a ParamStore,
        corners: &[Matrix],
        hands: &[crate::numerics::ParamId],
        target: &Matrix,
    ) -> (crate::numerics::Var, Vec<crate::numerics::Var>) {
        let mut parts = Vec::new();
        for s in 0..2 {
            parts.push(tape.param(store, hands[s]));
            parts.push(tape.input_with_grad(corners[s].clone()));
        }
        let p = tape.concat_rows(&parts);
        let h = tape.cyl_encode(p, false);
        let t = tape.input(target.clone());
        (tape.squared_error(h, t, 1e-3), parts)
    }
    let (c2, h2) = (corners.clone(), hands.clone());
    let report = gradcheck(
        &mut store,
        &hands,
        |tape, store| Ok(program(tape, store, &c2, &h2, &target).0),
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "detached frame: {}", report.max_rel_error);
    let mut tape = crate::numerics::Tape::new();
    let (loss, parts) = program(&mut tape, &store, &corners, &hands, &target);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.of(parts[1]).unwrap().max_abs(), 0.0);
}

#[test]
fn procrustes_identity_and_similarity() {
    let mut rng = CounterRng::new(8);
    let y = random_pose(&mut rng);
    let a = procrustes_align(&y, &y).unwrap();
    assert!((a.points() - y.points()).norm() < 1e-9);
    for _ in 0..20 {
        let r = random_rotation(&mut rng);
        let s = rng.uniform_range(0.3, 3.0);
        let t = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 100.0;
        let est = Pose3D::new(Similarity { scale: s, rotation: r, translation: t }.apply(y.points())).unwrap();
        let a = procrustes_align(&est, &y).unwrap();
        assert!((a.points() - y.points()).norm() < 1e-8);
    }
}

#[test]
fn procrustes_rejects_collapsed_estimate() {
    let mut rng = CounterRng::new(9);
    let y = random_pose(&mut rng);
    let flat = Pose3D::new(Matrix3xX::from_element(NUM_POINTS, 2.0)).unwrap();
    assert!(matches!(procrustes_align(&flat, &y), Err(crate::Error::DegeneratePose)));
}

fn residual(src: &Matrix3xX<f64>, dst: &Matrix3xX<f64>) -> f64 {
    (src - dst).norm_squared()
}

/// Search over rotation vector and log-scale with the translation fixed by
/// centroids, refining a coarse grid by shrinking random perturbations.
fn brute_force_similarity_residual(src: &Matrix3xX<f64>, dst: &Matrix3xX<f64>, rng: &mut CounterRng) -> f64 {
    let eval = |w: &[f64; 4]| {
        let r = Rotation3::new(Vector3::new(w[0], w[1], w[2])).into_inner();
        let s = w[3].exp();
        let mu_s = src.column_sum() / src.ncols() as f64;
        let mu_d = dst.column_sum() / dst.ncols() as f64;
        let mut moved = r * src * s;
        let t = mu_d - r * mu_s * s;
        for mut c in moved.column_iter_mut() {
            c += t;
        }
        residual(&moved, dst)
    };
    let mut best = ([0.0; 4], f64::INFINITY);
    let steps = [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5];
    for &a in &steps {
        for &b in &steps {
            for &c in &steps {
                for &ls in &[-0.5, 0.0, 0.5] {
                    let w = [a, b, c, ls];
                    let v = eval(&w);
                    if v < best.1 {
                        best = (w, v);
                    }
                }
            }
        }
    }
    let mut radius = 0.5;
    while radius > 1e-9 {
        let mut improved = false;
        for _ in 0..200 {
            let mut w = best.0;
            for x in &mut w {
                *x += radius * rng.normal();
            }
            let v = eval(&w);
            if v < best.1 {
                best = (w, v);
                improved = true;
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    best.1
}

#[test]
fn procrustes_matches_brute_force_on_toy_pose() {
    let mut rng = CounterRng::new(10);
    let reference = Matrix3xX::from_columns(&[
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(10.0, 0.0, 0.0),
        Vector3::new(0.0, 7.0, 0.0),
        Vector3::new(0.0, 0.0, 5.0),
        Vector3::new(4.0, 4.0, 4.0),
    ]);
    let r = random_rotation(&mut rng);
    let mut est = r * &reference * 1.3;
    est[(0, 4)] += 3.0; // one displaced point
    est[(2, 1)] -= 1.0;
    let sim = procrustes_transform(&est, &reference).unwrap();
    let closed = residual(&sim.apply(&est), &reference);
    let brute = brute_force_similarity_residual(&est, &reference, &mut rng);
    assert!(closed <= brute + 1e-9, "closed {closed} brute {brute}");
    assert!((closed - brute).abs() <= 1e-6 * brute.max(1.0), "closed {closed} brute {brute}");
}

#[test]
fn procrustes_residual_invariant_under_similarity_of_estimate() {
    let mut rng = CounterRng::new(11);
    let y = random_pose(&mut rng);
    let noisy = Pose3D::new(y.points().map(|v| v + rng.normal() * 5.0)).unwrap();
    let base = residual(procrustes_align(&noisy, &y).unwrap().points(), y.points());
    for _ in 0..20 {
        let moved = Pose3D::new(
            Similarity {
                scale: rng.uniform_range(0.5, 2.0),
                rotation: random_rotation(&mut rng),
                translation: Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 50.0,
            }
            .apply(noisy.points()),
        )
        .unwrap();
        let r = residual(procrustes_align(&moved, &y).unwrap().points(), y.points());
        assert!((r - base).abs() < 1e-9 * base.max(1.0));
    }
}

#[test]
fn pinhole_projection() {
    let cam = PinholeCamera::default();
    let mut rng = CounterRng::new(12);
    let y = random_pose(&mut rng);
    let x = cam.project(&y).unwrap();
    for i in 0..NUM_POINTS {
        let p = y.point(i);
        assert!((x.points()[(0, i)] - (600.0 * p.x / p.z + 320.0)).abs() < 1e-12);
        assert!((x.points()[(1, i)] - (600.0 * p.y / p.z + 240.0)).abs() < 1e-12);
    }
}

#[test]
fn pose_validation() {
    assert!(Pose3D::new(Matrix3xX::zeros(28)).is_err());
    let mut m = Matrix3xX::zeros(NUM_POINTS);
    m[(0, 0)] = f64::NAN;
    assert!(Pose3D::new(m).is_err());
}
