//! Records, the interchange file format, semi-supervised splitting, the
//! synthetic grasp generator and the temporal pseudo-label baseline.
//!
//! Interchange files hold one JSON object per line:
//!
//! ```text
//! {"sequence_id": "s01", "frame_idx": 0, "points_2d": [[u, v], ...], "points_3d": [[x, y, z], ...]}
//! ```
//!
//! `points_2d` has 29 pixel rows, `points_3d` (optional) 29 millimeter rows,
//! both in the point order documented in [`crate::geometry`]. Optional keys
//! `labeled` (defaults to whether `points_3d` is present) and `contact` are
//! carried through untouched. Blank lines are ignored.

mod io;
mod pseudo;
mod split;
mod synth;

pub use io::{load_dataset, parse_dataset, save_dataset, to_jsonl};
pub use pseudo::interpolate_pseudo_labels;
pub use split::{mark_split, split_from_flags, split_semi_supervised, DatasetSplit, Frame, SUBSEQUENCE_LEN};
pub use synth::{synth_generate, synth_generate_with, SynthOptions};

use crate::geometry::{Pose2D, Pose3D};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub sequence_id: String,
    pub frame_idx: u64,
    pub pose2d: Pose2D,
    pub pose3d: Option<Pose3D>,
    /// Whether the 3D annotation may be used for training.
    pub labeled: bool,
    pub contact: Option<bool>,
}
