use crate::data::DatasetRecord;
use crate::error::{Error, Result};
use crate::estimator::GraphUNet;
use crate::geometry::{Pose2D, Pose3D};
use crate::numerics::Checkpoint;

/// `est.kind` of a checkpoint whose estimates are the reference poses.
pub const ORACLE_KIND: &str = "oracle";

/// Something that turns records into 3D estimates for evaluation.
pub enum EvalModel {
    Network(Box<GraphUNet>),
    /// Returns each record's own 3D pose; checks the evaluation plumbing.
    Oracle,
}

impl EvalModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.meta("est.kind") {
            Some(ORACLE_KIND) => Ok(EvalModel::Oracle),
            Some(_) => GraphUNet::from_checkpoint(ck).map(|n| EvalModel::Network(Box::new(n))),
            None => Err(Error::Checkpoint("no estimator in checkpoint (missing est.kind)".into())),
        }
    }

    pub fn oracle_checkpoint() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.meta.insert("est.kind".into(), ORACLE_KIND.into());
        ck
    }

    /// Estimates for every record; the oracle needs each record's 3D pose.
    pub fn predict(&self, records: &[DatasetRecord]) -> Result<Vec<Pose3D>> {
        match self {
            EvalModel::Network(net) => {
                let xs: Vec<&Pose2D> = records.iter().map(|r| &r.pose2d).collect();
                net.estimate_batch(&xs)
            }
            EvalModel::Oracle => records
                .iter()
                .map(|r| {
                    r.pose3d.clone().ok_or_else(|| Error::MissingLabels {
                        sequence_id: r.sequence_id.clone(),
                        frame_idx: r.frame_idx,
                    })
                })
                .collect(),
        }
    }
}
