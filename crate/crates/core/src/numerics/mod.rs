//! Dense linear algebra, reverse-mode differentiation, optimization and
//! clustering used by the learning modules.

mod checkpoint;
mod gradcheck;
mod kmeans;
mod matrix;
mod params;
mod rng;
mod tape;

pub use checkpoint::{sha256_hex, Checkpoint};
pub use gradcheck::{gradcheck, gradcheck_with, relative_error, GradcheckOptions, GradcheckReport, FD_STEP};
pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS as KMEANS_MAX_ITERATIONS};
pub use matrix::{gemm, Matrix};
pub use params::{adam_step, AdamConfig, ParamEntry, ParamId, ParamKind, ParamStore};
pub use rng::{mix64, CounterRng};
pub use tape::{CustomOp, Gradients, Tape, Var};

#[allow(unused_imports)]
pub(crate) use tape::interval_violation;


/// Whether batch normalization uses mini-batch statistics or running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
