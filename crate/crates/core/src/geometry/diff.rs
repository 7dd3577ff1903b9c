//! Differentiable cylindrical encoding of stacked pose estimates.

use nalgebra::Vector3;

use super::cylindrical::RHO_EPS;
use super::frame::{gram_schmidt, MIN_EDGE};
use super::{BOX_CORNERS, CYL_DIM, HAND_JOINTS, NUM_POINTS};
use crate::numerics::{CustomOp, Matrix, Tape, Var};

/// Backward rule for [`cyl_encode_batch`]. With `frame_grad` off the box
/// frame is treated as a constant and only hand joints receive gradient.
pub struct CylEncodeOp {
    pub frame_grad: bool,
}

fn point(p: &Matrix, sample: usize, i: usize) -> Vector3<f64> {
    let r = p.row(sample * NUM_POINTS + i);
    Vector3::new(r[0], r[1], r[2])
}

struct SampleFrame {
    origin: Vector3<f64>,
    e2: Vector3<f64>,
    x: Vector3<f64>,
    y: Vector3<f64>,
    z: Vector3<f64>,
    n1: f64,
    n2: f64,
}

fn sample_frame(p: &Matrix, s: usize) -> SampleFrame {
    let c: [Vector3<f64>; BOX_CORNERS] = std::array::from_fn(|i| point(p, s, HAND_JOINTS + i));
    let origin = c.iter().sum::<Vector3<f64>>() / BOX_CORNERS as f64;
    let e1 = c[1] - c[0];
    let e2 = c[2] - c[0];
    let e3 = c[4] - c[0];
    let (x, y, z, n1, n2, _) = gram_schmidt(&e1, &e2, &e3);
    SampleFrame { origin, e2, x, y, z, n1, n2 }
}

/// Encodes every stacked pose of `points` (`B * 29` rows of `x, y, z`) into a
/// `B x 84` matrix of cylindrical hand vectors using each pose's own box frame.
pub fn cyl_encode_batch(points: &Matrix) -> Matrix {
    assert_eq!(points.cols(), 3);
    assert_eq!(points.rows() % NUM_POINTS, 0);
    let batch = points.rows() / NUM_POINTS;
    let mut out = Matrix::zeros(batch, CYL_DIM);
    for s in 0..batch {
        let f = sample_frame(points, s);
        let row = out.row_mut(s);
        for j in 0..HAND_JOINTS {
            let d = point(points, s, j) - f.origin;
            let (qx, qy, qz) = (f.x.dot(&d), f.y.dot(&d), f.z.dot(&d));
            let rho = qx.hypot(qy);
            let (c, sn) = if rho < RHO_EPS { (1.0, 0.0) } else { (qx / rho, qy / rho) };
            row[4 * j..4 * j + 4].copy_from_slice(&[rho, c, sn, qz]);
        }
    }
    out
}

/// Adjoint of `v / max(|v|, MIN_EDGE)`.
fn normalize_back(g: &Vector3<f64>, unit: &Vector3<f64>, norm: f64) -> Vector3<f64> {
    if norm > MIN_EDGE {
        (g - unit * g.dot(unit)) / norm
    } else {
        g / MIN_EDGE
    }
}

impl CustomOp for CylEncodeOp {
    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>> {
        let p = inputs[0];
        let batch = p.rows() / NUM_POINTS;
        let mut gp = Matrix::zeros(p.rows(), 3);
        for s in 0..batch {
            let f = sample_frame(p, s);
            let gh = grad_out.row(s);
            let mut g_origin = Vector3::zeros();
            let (mut gx, mut gy, mut gz) = (Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
            for j in 0..HAND_JOINTS {
                let d = point(p, s, j) - f.origin;
                let (qx, qy) = (f.x.dot(&d), f.y.dot(&d));
                let rho = qx.hypot(qy);
                let (g_rho, g_cos, g_sin, g_z) = (gh[4 * j], gh[4 * j + 1], gh[4 * j + 2], gh[4 * j + 3]);
                let (gqx, gqy) = if rho < RHO_EPS {
                    (0.0, 0.0)
                } else {
                    let r3 = rho * rho * rho;
                    (
                        g_rho * qx / rho + g_cos * qy * qy / r3 - g_sin * qx * qy / r3,
                        g_rho * qy / rho - g_cos * qx * qy / r3 + g_sin * qx * qx / r3,
                    )
                };
                let gpj = f.x * gqx + f.y * gqy + f.z * g_z;
                let r = s * NUM_POINTS + j;
                for k in 0..3 {
                    gp[(r, k)] += gpj[k];
                }
                if self.frame_grad {
                    g_origin -= gpj;
                    gx += d * gqx;
                    gy += d * gqy;
                    gz += d * g_z;
                }
            }
            if !self.frame_grad {
                continue;
            }
            gx += f.y.cross(&gz);
            gy += gz.cross(&f.x);
            let gw2 = normalize_back(&gy, &f.y, f.n2);
            let a = f.e2.dot(&f.x);
            let ge2 = gw2 - f.x * f.x.dot(&gw2);
            gx += -f.e2 * f.x.dot(&gw2) - gw2 * a;
            let ge1 = normalize_back(&gx, &f.x, f.n1);
            let per_corner = g_origin / BOX_CORNERS as f64;
            let base = s * NUM_POINTS + HAND_JOINTS;
            for i in 0..BOX_CORNERS {
                let mut gc = per_corner;
                match i {
                    0 => gc -= ge1 + ge2,
                    1 => gc += ge1,
                    2 => gc += ge2,
                    _ => {}
                }
                for k in 0..3 {
                    gp[(base + i, k)] += gc[k];
                }
            }
        }
        vec![Some(gp)]
    }
}

impl<'a> Tape<'a> {
    /// Differentiable `T` over stacked poses; see [`cyl_encode_batch`].
    pub fn cyl_encode(&mut self, points: Var, frame_grad: bool) -> Var {
        let out = cyl_encode_batch(self.value(points));
        self.custom(&[points], out, Box::new(CylEncodeOp { frame_grad }))
    }
}
