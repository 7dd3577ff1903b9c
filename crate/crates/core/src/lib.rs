//! Semi-supervised 2D to 3D hand-object pose lifting.
//!
//! A 2D keypoint estimator is trained from a small labeled subset plus many
//! unlabeled frames. Unlabeled frames are supervised through the
//! reconstruction error of a learned pose dictionary that lives in an
//! object-centered cylindrical coordinate system.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod numerics;

pub use config::TrainConfig;
pub use error::{Error, Result};
