//! Procedural grasps around random boxes.
//!
//! A grasp is described by the approach azimuth and elevation (direction from
//! the box center to the palm), the palm gap to the box surface, the roll of
//! the hand about the approach axis, a common finger curl and the finger
//! spread. Each finger adds a small curl offset. Grasps stay near one side of
//! the box and boxes are tilted away from a reference orientation, so the
//! hand-object configurations form a compact family seen from many views.
//! Every parameter and the box pose follow a clamped random walk across the
//! frames of a sequence.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::DatasetRecord;
use crate::geometry::{canonical_box_corners, PinholeCamera, Pose3D, HAND_JOINTS};
use crate::numerics::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub camera: PinholeCamera,
    /// Prefix of generated sequence ids.
    pub prefix: String,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { camera: PinholeCamera::default(), prefix: "seq".into() }
    }
}

/// Finger layout in the hand frame: knuckle position (mm) and bone lengths.
const FINGERS: [([f64; 3], [f64; 3]); 4] = [
    ([22.0, 80.0, 0.0], [40.0, 24.0, 18.0]),
    ([2.0, 85.0, 0.0], [44.0, 28.0, 19.0]),
    ([-17.0, 80.0, 0.0], [41.0, 26.0, 18.0]),
    ([-34.0, 70.0, 0.0], [32.0, 19.0, 16.0]),
];
const THUMB_BASE: [f64; 3] = [20.0, 18.0, 0.0];
const THUMB_BONES: [f64; 3] = [40.0, 32.0, 25.0];
/// Distance from the wrist to the palm center along the finger direction.
const PALM_OFFSET: f64 = 45.0;

#[derive(Clone, Debug)]
struct Grasp {
    azimuth: f64,
    elevation: f64,
    gap: f64,
    roll: f64,
    curl: f64,
    spread: f64,
    finger_noise: [f64; 5],
}

impl Grasp {
    fn sample(rng: &mut CounterRng) -> Self {
        Self {
            azimuth: rng.uniform_range(-0.25, 0.25),
            elevation: rng.uniform_range(-0.15, 0.15),
            gap: rng.uniform_range(20.0, 30.0),
            roll: rng.uniform_range(-0.15, 0.15),
            curl: rng.uniform_range(0.45, 0.65),
            spread: rng.uniform_range(0.05, 0.15),
            finger_noise: std::array::from_fn(|_| rng.normal() * 0.08),
        }
    }

    fn step(&mut self, rng: &mut CounterRng) {
        self.azimuth += rng.normal() * 0.03;
        self.elevation = (self.elevation + rng.normal() * 0.02).clamp(-0.7, 0.7);
        self.gap = (self.gap + rng.normal()).clamp(10.0, 40.0);
        self.roll += rng.normal() * 0.03;
        self.curl = (self.curl + rng.normal() * 0.02).clamp(0.25, 0.85);
        self.spread = (self.spread + rng.normal() * 0.01).clamp(0.0, 0.25);
        for n in &mut self.finger_noise {
            *n = (*n + rng.normal() * 0.01).clamp(-0.25, 0.25);
        }
    }
}

fn v(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Four joints of a planar chain starting at `base` along `dir`, bending
/// toward `normal` by the cumulative `angles`.
fn chain(
    base: Vector3<f64>,
    dir: Vector3<f64>,
    normal: Vector3<f64>,
    bones: [f64; 3],
    angles: [f64; 3],
) -> [Vector3<f64>; 4] {
    let mut out = [base; 4];
    let mut phi = 0.0;
    for i in 0..3 {
        phi += angles[i];
        let d = dir * phi.cos() + normal * phi.sin();
        out[i + 1] = out[i] + d * bones[i];
    }
    out
}

/// 21 joints in the hand frame: x toward the thumb, y along the fingers,
/// z out of the palm. The wrist is the origin.
fn hand_joints(g: &Grasp) -> Vec<Vector3<f64>> {
    let z = Vector3::z();
    let mut joints = vec![Vector3::zeros()];
    let thumb_dir = Vector3::new(0.75, 0.55, 0.35).normalize();
    let thumb_normal = (z - thumb_dir * thumb_dir.dot(&z)).normalize();
    let tc = 0.5 * g.curl + g.finger_noise[0];
    joints.extend(chain(v(THUMB_BASE), thumb_dir, thumb_normal, THUMB_BONES, [0.3 * tc, tc, 0.8 * tc]));
    let spread = [1.0, 0.33, -0.33, -1.0];
    for (f, (base, bones)) in FINGERS.iter().enumerate() {
        let a = g.spread * spread[f];
        let dir = Vector3::new(a.sin(), a.cos(), 0.0);
        let c = g.curl + g.finger_noise[f + 1];
        joints.extend(chain(v(*base), dir, z, *bones, [0.9 * c, 1.1 * c, 0.7 * c]));
    }
    debug_assert_eq!(joints.len(), HAND_JOINTS);
    joints
}

/// Hand joints placed around a box with half extents `half`, in box coordinates.
fn place_hand(g: &Grasp, half: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let u = Vector3::new(g.elevation.cos() * g.azimuth.cos(), g.elevation.cos() * g.azimuth.sin(), g.elevation.sin());
    let support = half.x * u.x.abs() + half.y * u.y.abs() + half.z * u.z.abs();
    let palm = u * (support + g.gap);
    let ez = -u;
    let reference = if u.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let ey0 = (reference - u * reference.dot(&u)).normalize();
    let ey = Rotation3::from_axis_angle(&Unit::new_unchecked(u), g.roll) * ey0;
    let ex = ey.cross(&ez);
    let rot = Matrix3::from_columns(&[ex, ey, ez]);
    let wrist = palm - ey * PALM_OFFSET;
    hand_joints(g).iter().map(|p| rot * p + wrist).collect()
}

/// Maximum tilt of a box away from the reference orientation (rad).
const MAX_TILT: f64 = 0.8;

/// Rotation about a uniformly random axis by an angle in `[0, MAX_TILT)`.
fn tilted_rotation(rng: &mut CounterRng) -> Rotation3<f64> {
    let axis = Vector3::new(rng.normal(), rng.normal(), rng.normal());
    Rotation3::new(axis.normalize() * rng.uniform_range(0.0, MAX_TILT))
}

/// Generates `n_sequences * frames_per_seq` records, all carrying 3D points.
pub fn synth_generate(n_sequences: usize, frames_per_seq: usize, seed: u64) -> Vec<DatasetRecord> {
    synth_generate_with(n_sequences, frames_per_seq, seed, &SynthOptions::default())
}

pub fn synth_generate_with(
    n_sequences: usize,
    frames_per_seq: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Vec<DatasetRecord> {
    let root = CounterRng::new(seed).fork_str("synth");
    let mut out = Vec::with_capacity(n_sequences * frames_per_seq);
    for s in 0..n_sequences {
        let mut rng = root.fork(s as u64);
        let dims = Vector3::new(
            rng.uniform_range(40.0, 120.0),
            rng.uniform_range(40.0, 120.0),
            rng.uniform_range(40.0, 120.0),
        );
        let corners = canonical_box_corners(&dims);
        let half = dims / 2.0;
        let mut rot = tilted_rotation(&mut rng);
        let mut center = Vector3::new(
            rng.uniform_range(-60.0, 60.0),
            rng.uniform_range(-60.0, 60.0),
            rng.uniform_range(450.0, 650.0),
        );
        let mut grasp = Grasp::sample(&mut rng);
        for f in 0..frames_per_seq {
            if f > 0 {
                grasp.step(&mut rng);
                let w = Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 0.02;
                rot = Rotation3::new(w) * rot;
                center += Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 2.0;
                center.x = center.x.clamp(-80.0, 80.0);
                center.y = center.y.clamp(-80.0, 80.0);
                center.z = center.z.clamp(430.0, 670.0);
            }
            let pts: Vec<Vector3<f64>> = place_hand(&grasp, &half)
                .into_iter()
                .chain(corners.iter().copied())
                .map(|p| rot * p + center)
                .collect();
            let pose3d = Pose3D::from_points(&pts).expect("generated points are finite");
            let pose2d = opts.camera.project(&pose3d).expect("generated scenes lie in front of the camera");
            out.push(DatasetRecord {
                sequence_id: format!("{}{s:04}", opts.prefix),
                frame_idx: f as u64,
                pose2d,
                pose3d: Some(pose3d),
                labeled: true,
                contact: Some(true),
            });
        }
    }
    out
}
