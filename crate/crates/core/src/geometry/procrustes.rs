use nalgebra::{Matrix3, Matrix3xX, Vector3};

use super::Pose3D;
use crate::error::{Error, Result};

/// `p -> scale * rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, pts: &Matrix3xX<f64>) -> Matrix3xX<f64> {
        let mut out = (self.rotation * pts) * self.scale;
        for mut c in out.column_iter_mut() {
            c += self.translation;
        }
        out
    }
}

fn centroid(p: &Matrix3xX<f64>) -> Vector3<f64> {
    p.column_sum() / p.ncols() as f64
}

/// Least-squares similarity taking `source` onto `target` (Umeyama).
pub fn procrustes_transform(source: &Matrix3xX<f64>, target: &Matrix3xX<f64>) -> Result<Similarity> {
    if source.ncols() != target.ncols() || source.ncols() == 0 {
        return Err(Error::shape(format!("{} points", target.ncols()), format!("{} points", source.ncols())));
    }
    let (mu_s, mu_t) = (centroid(source), centroid(target));
    let mut xs = source.clone();
    let mut xt = target.clone();
    for mut c in xs.column_iter_mut() {
        c -= mu_s;
    }
    for mut c in xt.column_iter_mut() {
        c -= mu_t;
    }
    let spread = xs.norm_squared();
    let scale_ref = xt.norm_squared().max(1.0);
    if spread <= 1e-24 * scale_ref {
        return Err(Error::DegeneratePose);
    }
    let cov = &xt * xs.transpose();
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let sv = svd.singular_values;
    let scale = (sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)]) / spread;
    let translation = mu_t - rotation * mu_s * scale;
    Ok(Similarity { scale, rotation, translation })
}

/// `estimate` moved by the similarity that best fits it to `reference`,
/// solved jointly over all points.
pub fn procrustes_align(estimate: &Pose3D, reference: &Pose3D) -> Result<Pose3D> {
    let t = procrustes_transform(estimate.points(), reference.points())?;
    Pose3D::new(t.apply(estimate.points()))
}
