//! Camera frame, object-oriented frame and the cylindrical hand representation.
//!
//! Point layout for every pose: 21 hand joints (wrist, then thumb, index,
//! middle, ring, pinky with 4 joints each from proximal to tip) followed by
//! the 8 object box corners. Corner `i` sits in the octant whose sign along
//! box axis `a` is `+` when bit `a` of `i` is set, so corner 0 is `(-,-,-)`,
//! corner 1 is `(+,-,-)`, corner 2 is `(-,+,-)`, corner 4 is `(-,-,+)` and
//! corner 7 is `(+,+,+)`.

mod cylindrical;
mod diff;
mod frame;
mod procrustes;

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};

pub use cylindrical::{cyl_decode, cyl_encode, encode_pose, CylJoint, CylPoseVector, RHO_EPS};
pub use diff::{cyl_encode_batch, CylEncodeOp};
pub use frame::{canonical_box_corners, object_frame_from_corners, ObjectFrame, MIN_EDGE};
pub use procrustes::{procrustes_align, procrustes_transform, Similarity};

pub const HAND_JOINTS: usize = 21;
pub const BOX_CORNERS: usize = 8;
pub const NUM_POINTS: usize = HAND_JOINTS + BOX_CORNERS;
/// Length of a cylindrical hand vector.
pub const CYL_DIM: usize = 4 * HAND_JOINTS;

/// 3D pose in camera coordinates, millimeters; one column per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3D {
    points: Matrix3xX<f64>,
}

impl Pose3D {
    pub fn new(points: Matrix3xX<f64>) -> Result<Self> {
        if points.ncols() != NUM_POINTS {
            return Err(Error::validation(
                "points_3d",
                format!("expected {NUM_POINTS} points, got {}", points.ncols()),
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("points_3d", "non-finite coordinate"));
        }
        Ok(Self { points })
    }

    pub fn from_points(points: &[Vector3<f64>]) -> Result<Self> {
        Self::new(Matrix3xX::from_columns(points))
    }

    /// Row-major `[x0, y0, z0, x1, ...]`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * NUM_POINTS {
            return Err(Error::validation("points_3d", format!("expected {} values", 3 * NUM_POINTS)));
        }
        Self::new(Matrix3xX::from_column_slice(flat))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.as_slice().to_vec()
    }

    pub fn points(&self) -> &Matrix3xX<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points.column(i).into_owned()
    }

    pub fn corners(&self) -> [Vector3<f64>; BOX_CORNERS] {
        std::array::from_fn(|i| self.point(HAND_JOINTS + i))
    }

    pub fn frame(&self) -> Result<ObjectFrame> {
        object_frame_from_corners(&self.corners())
    }

    /// `R * p + t` applied to every point.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Pose3D {
        let mut points = rotation * &self.points;
        for mut c in points.column_iter_mut() {
            c += translation;
        }
        Pose3D { points }
    }
}

/// 2D keypoints in pixels; one column per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose2D {
    points: Matrix2xX<f64>,
}

impl Pose2D {
    pub fn new(points: Matrix2xX<f64>) -> Result<Self> {
        if points.ncols() != NUM_POINTS {
            return Err(Error::validation(
                "points_2d",
                format!("expected {NUM_POINTS} points, got {}", points.ncols()),
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("points_2d", "non-finite coordinate"));
        }
        Ok(Self { points })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * NUM_POINTS {
            return Err(Error::validation("points_2d", format!("expected {} values", 2 * NUM_POINTS)));
        }
        Self::new(Matrix2xX::from_column_slice(flat))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.as_slice().to_vec()
    }

    pub fn points(&self) -> &Matrix2xX<f64> {
        &self.points
    }
}

/// Pinhole camera with square pixels and no skew.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self { focal: 600.0, cx: 320.0, cy: 240.0 }
    }
}

impl PinholeCamera {
    pub fn project(&self, pose: &Pose3D) -> Result<Pose2D> {
        let p = pose.points();
        let mut out = Matrix2xX::zeros(p.ncols());
        for (i, c) in p.column_iter().enumerate() {
            if c.z <= 0.0 {
                return Err(Error::validation("points_3d", format!("point {i} behind the camera")));
            }
            out[(0, i)] = self.focal * c.x / c.z + self.cx;
            out[(1, i)] = self.focal * c.y / c.z + self.cy;
        }
        Pose2D::new(out)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::numerics::CounterRng;
    use nalgebra::{Rotation3, Unit};

    pub fn random_rotation(rng: &mut CounterRng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(rng.normal(), rng.normal(), rng.normal()));
        Rotation3::from_axis_angle(&axis, rng.uniform_range(-3.1, 3.1)).into_inner()
    }

    /// Random box with a hand cloud around it, all joints away from the box z axis.
    pub fn random_pose(rng: &mut CounterRng) -> Pose3D {
        let dims = Vector3::new(
            rng.uniform_range(40.0, 120.0),
            rng.uniform_range(40.0, 120.0),
            rng.uniform_range(40.0, 120.0),
        );
        let rot = random_rotation(rng);
        let t = Vector3::new(rng.normal() * 50.0, rng.normal() * 50.0, 500.0 + rng.normal() * 30.0);
        let mut pts = Vec::new();
        for _ in 0..HAND_JOINTS {
            let r = rng.uniform_range(20.0, 120.0);
            let phi = rng.uniform_range(-3.1, 3.1);
            let z = rng.uniform_range(-80.0, 80.0);
            pts.push(rot * Vector3::new(r * phi.cos(), r * phi.sin(), z) + t);
        }
        for c in canonical_box_corners(&dims) {
            pts.push(rot * c + t);
        }
        Pose3D::from_points(&pts).unwrap()
    }
}

#[cfg(test)]
mod tests;
