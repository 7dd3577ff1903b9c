use nalgebra::{Matrix3, Vector3};

use super::BOX_CORNERS;
use crate::error::{Error, Result};

/// Minimum length, in millimeters, of a box edge that defines an axis.
pub const MIN_EDGE: f64 = 1e-6;
/// Minimum sine of the angle between an edge and the span of the previous axes.
const MIN_INDEPENDENCE: f64 = 1e-6;

/// Object-oriented Cartesian frame: origin at the box center, axes along its edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectFrame {
    pub origin: Vector3<f64>,
    /// Columns are the x', y', z' directions in camera coordinates.
    pub axes: Matrix3<f64>,
}

impl ObjectFrame {
    pub fn identity() -> Self {
        Self { origin: Vector3::zeros(), axes: Matrix3::identity() }
    }

    /// Camera point to object coordinates: `axes^T (p - origin)`.
    pub fn to_object_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.origin)
    }

    /// Inverse of [`ObjectFrame::to_object_frame`].
    pub fn to_camera_frame(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.axes * q + self.origin
    }
}

/// Corners of an axis-aligned box of the given edge lengths centered at the origin,
/// in canonical order.
pub fn canonical_box_corners(dims: &Vector3<f64>) -> [Vector3<f64>; BOX_CORNERS] {
    std::array::from_fn(|i| {
        let s = |bit: usize| if i >> bit & 1 == 1 { 0.5 } else { -0.5 };
        Vector3::new(s(0) * dims.x, s(1) * dims.y, s(2) * dims.z)
    })
}

/// Orthonormal frame from the three edges leaving corner 0.
///
/// Returns `(x, y, z, |e1|, |w2|, |w3|)` where `w2`, `w3` are the Gram-Schmidt
/// residuals of the second and third edges. `z` is always `x × y`, which equals
/// the normalized third residual for a right-handed box and its flip otherwise.
pub(crate) fn gram_schmidt(
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
    e3: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64, f64, f64) {
    let n1 = e1.norm();
    let x = e1 / n1.max(MIN_EDGE);
    let w2 = e2 - x * e2.dot(&x);
    let n2 = w2.norm();
    let y = w2 / n2.max(MIN_EDGE);
    let z = x.cross(&y);
    let w3 = e3 - x * e3.dot(&x) - y * e3.dot(&y);
    (x, y, z, n1, n2, w3.norm())
}

/// Frame of a box given its 8 corners in canonical order.
pub fn object_frame_from_corners(corners: &[Vector3<f64>; BOX_CORNERS]) -> Result<ObjectFrame> {
    let origin = corners.iter().sum::<Vector3<f64>>() / BOX_CORNERS as f64;
    let e1 = corners[1] - corners[0];
    let e2 = corners[2] - corners[0];
    let e3 = corners[4] - corners[0];
    for (name, e) in [("0->1", &e1), ("0->2", &e2), ("0->4", &e3)] {
        if e.norm() < MIN_EDGE {
            return Err(Error::DegenerateBox(format!("edge {name} has length {:.3e}", e.norm())));
        }
    }
    let (x, y, z, _, n2, n3) = gram_schmidt(&e1, &e2, &e3);
    if n2 < MIN_INDEPENDENCE * e2.norm() || n3 < MIN_INDEPENDENCE * e3.norm() {
        return Err(Error::DegenerateBox("box edges are linearly dependent".into()));
    }
    Ok(ObjectFrame { origin, axes: Matrix3::from_columns(&[x, y, z]) })
}
