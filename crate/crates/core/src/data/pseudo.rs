use std::collections::HashMap;

use super::DatasetSplit;
use crate::geometry::{Pose2D, Pose3D};

/// Temporal pseudo-labels for unlabeled frames: per-coordinate linear
/// interpolation between the nearest labeled frames of the same sequence,
/// nearest copy when only one side exists, skipped when the sequence has no
/// label at all.
pub fn interpolate_pseudo_labels(split: &DatasetSplit) -> Vec<(Pose2D, Pose3D)> {
    let mut by_seq: HashMap<&str, Vec<(u64, &Pose3D)>> = HashMap::new();
    for f in &split.labeled {
        if let Some(p) = &f.pose3d {
            by_seq.entry(&f.sequence_id).or_default().push((f.frame_idx, p));
        }
    }
    for v in by_seq.values_mut() {
        v.sort_by_key(|(i, _)| *i);
    }
    let mut out = Vec::new();
    for f in &split.unlabeled {
        let Some(labels) = by_seq.get(f.sequence_id.as_str()) else {
            continue;
        };
        let after = labels.partition_point(|(i, _)| *i < f.frame_idx);
        let pose = match (after.checked_sub(1).map(|i| labels[i]), labels.get(after)) {
            (Some((ia, a)), Some(&(ib, b))) if ib > ia => {
                let w = (f.frame_idx - ia) as f64 / (ib - ia) as f64;
                Pose3D::new(a.points() * (1.0 - w) + b.points() * w).expect("blend of valid poses")
            }
            (Some((_, a)), _) => a.clone(),
            (None, Some(&(_, b))) => b.clone(),
            (None, None) => continue,
        };
        out.push((f.pose2d.clone(), pose));
    }
    out
}
