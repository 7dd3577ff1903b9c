use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::rng::CounterRng;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, step: FD_STEP, max_entries_per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub loss: f64,
    pub max_rel_error: f64,
    /// Worst relative error per parameter name.
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative error with a floor of `1e-6 * max(1, |loss|)` in the denominator,
/// so entries whose true gradient is zero are judged against rounding noise
/// of the loss rather than against zero.
pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = 1e-6 * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of `program` with central finite differences
/// for every entry of `params` (or a sample of them).
pub fn gradcheck<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    program: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Result<Var>,
{
    gradcheck_with(store, params, &(), |tape, store, _| program(tape, store), opts)
}

/// [`gradcheck`] with a borrowed context handed to `program` at the tape's
/// lifetime, e.g. a frozen module whose weights the program reads.
pub fn gradcheck_with<C: ?Sized, F>(
    store: &mut ParamStore,
    params: &[ParamId],
    ctx: &C,
    program: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore, &'a C) -> Result<Var>,
{
    let (loss, analytic) = {
        let mut tape = Tape::new();
        let loss_var = program(&mut tape, store, ctx)?;
        let loss = tape.scalar(loss_var);
        let grads = tape.backward(loss_var)?;
        let analytic: Vec<Matrix> = params
            .iter()
            .map(|&id| {
                let (r, c) = store.value(id).shape();
                grads.param(store, id).cloned().unwrap_or_else(|| Matrix::zeros(r, c))
            })
            .collect();
        (loss, analytic)
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = program(&mut tape, store, ctx)?;
        Ok(tape.scalar(v))
    };

    let mut rng = CounterRng::new(opts.seed);
    let mut report = GradcheckReport {
        loss,
        max_rel_error: 0.0,
        per_param: Vec::new(),
        entries_checked: 0,
        tolerance: opts.tolerance,
    };
    for (&id, grad) in params.iter().zip(&analytic) {
        let n = store.value(id).len();
        let indices = match opts.max_entries_per_param {
            Some(k) if k < n => rng.sample_indices(n, k),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for i in indices {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(grad.data()[i], numeric, loss));
            report.entries_checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((store.entry(id).name.clone(), worst));
    }
    Ok(report)
}
