use nalgebra::{Matrix3xX, Vector3};

use super::frame::ObjectFrame;
use super::{Pose3D, CYL_DIM, HAND_JOINTS};
use crate::error::{Error, Result};

/// Below this distance from the z' axis the polar angle is fixed to 0.
pub const RHO_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylJoint {
    pub rho: f64,
    pub cos_phi: f64,
    pub sin_phi: f64,
    pub z: f64,
}

impl CylJoint {
    pub fn from_object_point(q: &Vector3<f64>) -> Self {
        let rho = q.x.hypot(q.y);
        let (cos_phi, sin_phi) = if rho < RHO_EPS { (1.0, 0.0) } else { (q.x / rho, q.y / rho) };
        Self { rho, cos_phi, sin_phi, z: q.z }
    }

    /// Object-frame point; `(cos, sin)` is projected onto the unit circle first.
    pub fn to_object_point(&self) -> Vector3<f64> {
        let n = self.cos_phi.hypot(self.sin_phi);
        let (c, s) = if n > RHO_EPS { (self.cos_phi / n, self.sin_phi / n) } else { (1.0, 0.0) };
        Vector3::new(self.rho * c, self.rho * s, self.z)
    }
}

/// Flattened cylindrical hand pose, joint-major `(rho, cos, sin, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylPoseVector {
    values: Vec<f64>,
}

impl CylPoseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(4) {
            return Err(Error::shape("a multiple of 4 values", format!("{}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("cyl", "non-finite value"));
        }
        Ok(Self { values })
    }

    pub fn from_joints(joints: &[CylJoint]) -> Self {
        Self { values: joints.iter().flat_map(|j| [j.rho, j.cos_phi, j.sin_phi, j.z]).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.values.len() / 4
    }

    pub fn joint(&self, j: usize) -> CylJoint {
        let v = &self.values[4 * j..4 * j + 4];
        CylJoint { rho: v[0], cos_phi: v[1], sin_phi: v[2], z: v[3] }
    }
}

/// Hand joints of `y` in the cylindrical coordinates of `frame`.
pub fn cyl_encode(y: &Pose3D, frame: &ObjectFrame) -> CylPoseVector {
    let joints: Vec<CylJoint> =
        (0..HAND_JOINTS).map(|j| CylJoint::from_object_point(&frame.to_object_frame(&y.point(j)))).collect();
    CylPoseVector::from_joints(&joints)
}

/// `T(Y)`: cylindrical encoding in the frame of the pose's own box.
pub fn encode_pose(y: &Pose3D) -> Result<CylPoseVector> {
    Ok(cyl_encode(y, &y.frame()?))
}

/// Hand joints back in camera coordinates, one column per joint.
pub fn cyl_decode(h: &CylPoseVector, frame: &ObjectFrame) -> Result<Matrix3xX<f64>> {
    if h.len() != CYL_DIM {
        return Err(Error::shape(format!("{CYL_DIM} values"), format!("{}", h.len())));
    }
    let cols: Vec<Vector3<f64>> =
        (0..HAND_JOINTS).map(|j| frame.to_camera_frame(&h.joint(j).to_object_point())).collect();
    Ok(Matrix3xX::from_columns(&cols))
}
