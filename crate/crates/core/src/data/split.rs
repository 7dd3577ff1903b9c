use indexmap::IndexMap;

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D};
use crate::numerics::CounterRng;

/// Frames per subsequence in the labeling protocol.
pub const SUBSEQUENCE_LEN: usize = 5;

/// One frame with its bookkeeping. `pose3d` of an unlabeled frame is kept
/// only for evaluation and is never read by training code.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub sequence_id: String,
    pub frame_idx: u64,
    pub pose2d: Pose2D,
    pub pose3d: Option<Pose3D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    /// Labeled pairs; every entry has `pose3d`.
    pub labeled: Vec<Frame>,
    pub unlabeled: Vec<Frame>,
    pub seed: u64,
    pub ratio: f64,
    pub num_subsequences: usize,
    /// `(sequence_id, first frame_idx)` of every sampled subsequence.
    pub labeled_subsequences: Vec<(String, u64)>,
}

impl DatasetSplit {
    pub fn labeled_pairs(&self) -> impl Iterator<Item = (&Pose2D, &Pose3D)> {
        self.labeled.iter().map(|f| (&f.pose2d, f.pose3d.as_ref().expect("labeled frames carry 3D")))
    }

    pub fn unlabeled_inputs(&self) -> impl Iterator<Item = &Pose2D> {
        self.unlabeled.iter().map(|f| &f.pose2d)
    }

    /// Every frame labeled: the fully supervised arm.
    pub fn fully_labeled(&self) -> Result<DatasetSplit> {
        let mut labeled = self.labeled.clone();
        for f in &self.unlabeled {
            if f.pose3d.is_none() {
                return Err(Error::MissingLabels { sequence_id: f.sequence_id.clone(), frame_idx: f.frame_idx });
            }
            labeled.push(f.clone());
        }
        Ok(DatasetSplit { labeled, unlabeled: Vec::new(), ratio: 1.0, ..self.clone() })
    }
}

fn number_of_labeled(ratio: f64, n: usize) -> usize {
    // Guard against products such as 0.05 * 20 landing a hair above an integer.
    ((ratio * n as f64) - 1e-9).ceil().max(1.0).min(n as f64) as usize
}

/// Cuts every sequence into consecutive 5-frame subsequences (the last one
/// may be shorter) and labels `ceil(ratio * count)` of them, drawn uniformly
/// over all sequences.
pub fn split_semi_supervised(records: &[DatasetRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::validation("ratio", "must lie in (0, 1]"));
    }
    let mut sequences: IndexMap<&str, Vec<&DatasetRecord>> = IndexMap::new();
    for r in records {
        sequences.entry(&r.sequence_id).or_default().push(r);
    }
    let mut subsequences: Vec<Vec<&DatasetRecord>> = Vec::new();
    for frames in sequences.values_mut() {
        frames.sort_by_key(|r| r.frame_idx);
        subsequences.extend(frames.chunks(SUBSEQUENCE_LEN).map(<[&DatasetRecord]>::to_vec));
    }
    let n = subsequences.len();
    let mut chosen = vec![false; n];
    if n > 0 {
        let mut rng = CounterRng::new(seed).fork_str("split");
        for i in rng.sample_indices(n, number_of_labeled(ratio, n)) {
            chosen[i] = true;
        }
    }
    let frame = |r: &DatasetRecord| Frame {
        sequence_id: r.sequence_id.clone(),
        frame_idx: r.frame_idx,
        pose2d: r.pose2d.clone(),
        pose3d: r.pose3d.clone(),
    };
    let mut split = DatasetSplit {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        seed,
        ratio,
        num_subsequences: n,
        labeled_subsequences: Vec::new(),
    };
    for (sub, &take) in subsequences.iter().zip(&chosen) {
        if take {
            split.labeled_subsequences.push((sub[0].sequence_id.clone(), sub[0].frame_idx));
            for r in sub {
                if r.pose3d.is_none() {
                    return Err(Error::MissingLabels { sequence_id: r.sequence_id.clone(), frame_idx: r.frame_idx });
                }
                split.labeled.push(frame(r));
            }
        } else {
            split.unlabeled.extend(sub.iter().map(|r| frame(r)));
        }
    }
    Ok(split)
}

/// Split given by the records' own `labeled` flags, e.g. a file written by
/// [`mark_split`]. Frames keep their input order.
pub fn split_from_flags(records: &[DatasetRecord]) -> Result<DatasetSplit> {
    let mut split = DatasetSplit {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        seed: 0,
        ratio: 0.0,
        num_subsequences: 0,
        labeled_subsequences: Vec::new(),
    };
    for r in records {
        let f = Frame {
            sequence_id: r.sequence_id.clone(),
            frame_idx: r.frame_idx,
            pose2d: r.pose2d.clone(),
            pose3d: r.pose3d.clone(),
        };
        if r.labeled {
            split.labeled.push(f);
        } else {
            split.unlabeled.push(f);
        }
    }
    if split.labeled.is_empty() {
        return Err(Error::validation("labeled", "no record is marked labeled"));
    }
    split.ratio = split.labeled.len() as f64 / records.len() as f64;
    Ok(split)
}

/// Copies of `records` whose `labeled` flag follows `split`. 3D poses of
/// unlabeled frames are kept for evaluation.
pub fn mark_split(records: &[DatasetRecord], split: &DatasetSplit) -> Vec<DatasetRecord> {
    let labeled: std::collections::HashSet<(&str, u64)> =
        split.labeled.iter().map(|f| (f.sequence_id.as_str(), f.frame_idx)).collect();
    records
        .iter()
        .map(|r| DatasetRecord { labeled: labeled.contains(&(r.sequence_id.as_str(), r.frame_idx)), ..r.clone() })
        .collect()
}
