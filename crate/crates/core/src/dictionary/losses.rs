use super::module::Reconstructor;
use super::{AtomCoefficients, PoseDictionary};
use crate::error::{Error, Result};
use crate::geometry::CylPoseVector;
use crate::numerics::{interval_violation, Matrix, Mode, ParamStore, Tape, Var};

/// `max(lo - d, 0) + max(d - hi, 0)`.
pub fn interval_loss(d: f64, lo: f64, hi: f64) -> f64 {
    interval_violation(d, lo, hi)
}

/// Per-entry `(lo, hi, weight)` of the validity loss for a `4m x k` dictionary:
/// rho rows must be non-negative, cos and sin rows must stay in `[-1, 1]`,
/// z rows are free.
pub(crate) fn validity_bounds(rows: usize, cols: usize) -> (Matrix, Matrix, Matrix) {
    let m = rows / 4;
    let n_rho = (m * cols) as f64;
    let n_sc = (2 * m * cols) as f64;
    let mut lo = Matrix::filled(rows, cols, f64::NEG_INFINITY);
    let mut hi = Matrix::filled(rows, cols, f64::INFINITY);
    let mut w = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let (l, h, wt) = match r % 4 {
            0 => (0.0, f64::INFINITY, 1.0 / (3.0 * n_rho)),
            1 | 2 => (-1.0, 1.0, 2.0 / (3.0 * n_sc)),
            _ => (f64::NEG_INFINITY, f64::INFINITY, 0.0),
        };
        for c in 0..cols {
            lo[(r, c)] = l;
            hi[(r, c)] = h;
            w[(r, c)] = wt;
        }
    }
    (lo, hi, w)
}

/// Validity loss of the atoms: `2/(3|D_sc|) Σ I(d; -1, 1) + 1/(3|D_rho|) Σ I(d; 0, ∞)`.
pub fn loss_dict(dict: &PoseDictionary) -> f64 {
    let a = dict.atoms();
    let (lo, hi, w) = validity_bounds(a.rows(), a.cols());
    (0..a.len()).map(|i| w.data()[i] * interval_violation(a.data()[i], lo.data()[i], hi.data()[i])).sum()
}

pub fn loss_dict_on_tape(tape: &mut Tape<'_>, atoms: Var) -> Var {
    let (r, c) = tape.value(atoms).shape();
    let (lo, hi, w) = validity_bounds(r, c);
    tape.interval_penalty(atoms, lo, hi, w)
}

/// `D c`.
pub fn reconstruct(c: &AtomCoefficients, dict: &PoseDictionary) -> Result<CylPoseVector> {
    let a = dict.atoms();
    if c.values().len() != a.cols() {
        return Err(Error::shape(format!("{} coefficients", a.cols()), format!("{}", c.values().len())));
    }
    let out = (0..a.rows()).map(|r| a.row(r).iter().zip(c.values()).map(|(x, y)| x * y).sum()).collect();
    CylPoseVector::new(out)
}

/// Stacks cylindrical vectors as rows.
pub(crate) fn stack(h: &[CylPoseVector]) -> Result<Matrix> {
    let dim = h[0].len();
    let mut data = Vec::with_capacity(h.len() * dim);
    for v in h {
        if v.len() != dim {
            return Err(Error::shape(format!("{dim} values"), format!("{}", v.len())));
        }
        data.extend_from_slice(v.values());
    }
    Matrix::from_vec(h.len(), dim, data)
}

/// Reconstruction loss over the union of `parts` (each `n_i x 4m`):
/// `Σ ||h̃ - h||² / (4m · Σ n_i)`.
pub fn rec_loss_on_tape<'a, R: Reconstructor + ?Sized>(
    tape: &mut Tape<'a>,
    model: &'a R,
    parts: &[Var],
    mode: Mode,
    trainable: bool,
) -> Var {
    rec_loss_in(tape, model, model.store(), parts, mode, trainable)
}

/// [`rec_loss_on_tape`] reading weights from an explicit store.
pub fn rec_loss_in<'a, R: Reconstructor + ?Sized>(
    tape: &mut Tape<'a>,
    model: &R,
    store: &'a ParamStore,
    parts: &[Var],
    mode: Mode,
    trainable: bool,
) -> Var {
    let total: usize = parts.iter().map(|&p| tape.value(p).rows()).sum();
    let dim = tape.value(parts[0]).cols();
    let scale = 1.0 / (dim * total) as f64;
    let mut acc: Option<Var> = None;
    for &h in parts {
        if tape.value(h).rows() == 0 {
            continue;
        }
        let recon = model.reconstruct_in(store, tape, h, mode, trainable);
        let l = tape.squared_error(recon, h, scale);
        acc = Some(match acc {
            Some(a) => tape.add(a, l),
            None => l,
        });
    }
    acc.expect("at least one non-empty part")
}

/// Mean-squared reconstruction loss of a batch.
pub fn loss_rec<R: Reconstructor + ?Sized>(h_batch: &[CylPoseVector], model: &R, mode: Mode) -> Result<f64> {
    if h_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = stack(h_batch)?;
    let mut tape = Tape::new();
    let h = tape.input(m);
    let l = rec_loss_on_tape(&mut tape, model, &[h], mode, false);
    Ok(tape.scalar(l))
}

/// Per-sample `||h̃ - h||² / 4m` in inference mode.
pub fn reconstruction_errors<R: Reconstructor + ?Sized>(model: &R, h: &[CylPoseVector]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(h.len());
    for chunk in h.chunks(256) {
        let m = stack(chunk)?;
        let dim = m.cols() as f64;
        let mut tape = Tape::new();
        let hv = tape.input(m);
        let r = model.reconstruct(&mut tape, hv, Mode::Infer, false);
        let (rv, hv) = (tape.value(r), tape.value(hv));
        for s in 0..rv.rows() {
            let e: f64 = rv.row(s).iter().zip(hv.row(s)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(e / dim);
        }
    }
    Ok(out)
}
