//! Procrustes-aligned metrics, the method comparison and parameter sweeps.

mod benchmark;
mod metrics;
mod model;
mod report;

pub use benchmark::{
    evaluate_poses, run_benchmark, sweep, EvalReport, Method, MethodResult, RunFailure, RunMetrics, Runner, Summary,
    SweepAxis, SweepPoint, SweepTable, VALIDATION_FRAMES,
};
pub use metrics::{aligned_errors, default_thresholds, mpjpe, pck_curve, PointGroup, PCK_TOLERANCE};
pub use model::{EvalModel, ORACLE_KIND};
pub use report::ALIGNMENT_NOTE;
