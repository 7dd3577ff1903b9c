//! The 2D to 3D estimator and its Phase II training against a frozen
//! reconstruction module.

mod graph;
mod net;
mod train;

pub use graph::{clusters_level1, clusters_level2, pooling_matrix, unpooling_matrix, SkeletonGraph};
pub use net::GraphUNet;
pub use train::{
    estimate_rows, loss_supervised, loss_total, rec_ramp, steps_per_epoch, total_loss_on_tape, train_estimator,
    train_phase2, LossVars, Phase2Epoch, Phase2History, RecSupervision,
};
