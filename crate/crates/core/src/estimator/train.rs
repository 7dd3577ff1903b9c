//! Phase II losses and training loop.

use std::fmt::Write as _;

use super::net::{poses_to_rows, rows_to_poses, GraphUNet};
use crate::config::{TrainConfig, BN_MOMENTUM};
use crate::data::DatasetSplit;
use crate::dictionary::{encode_training_poses, rec_loss_in, Reconstructor};
use crate::error::{Error, Result};
use crate::eval::{mpjpe, PointGroup};
use crate::geometry::{Pose2D, Pose3D, NUM_POINTS};
use crate::numerics::{adam_step, AdamConfig, CounterRng, Mode, ParamStore, Tape, Var};

/// Frozen reconstruction supervision for unlabeled estimates.
#[derive(Clone, Copy)]
pub struct RecSupervision<'r> {
    pub module: &'r dyn Reconstructor,
    pub lambda_r: f64,
    /// Differentiate through the box frame built from the estimated corners.
    pub frame_grad: bool,
}

/// Loss terms recorded on a tape.
pub struct LossVars {
    pub total: Var,
    pub supervised: Var,
    pub rec: Option<Var>,
}

/// Builds `L_L + lambda_r * L_rec(T(E(X_L)) ∪ T(E(X_U)))` on `tape`. Labeled
/// and unlabeled inputs go through separate forward passes, so batch
/// statistics of one never leak into the other's loss.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    net: &GraphUNet,
    store: &'a ParamStore,
    labeled: &[(&Pose2D, &Pose3D)],
    unlabeled: &[&Pose2D],
    rec: Option<RecSupervision<'a>>,
    mode: Mode,
    trainable: bool,
) -> Result<LossVars> {
    if labeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let xl = tape.input(net.prepare_inputs(labeled.iter().map(|p| p.0)));
    let pred_l = net.forward_in(store, tape, xl, mode, trainable);
    let yl = tape.input(poses_to_rows(labeled.iter().map(|p| p.1)));
    let supervised = tape.squared_error(pred_l, yl, 1.0 / (3 * NUM_POINTS * labeled.len()) as f64);
    let Some(rec) = rec.filter(|r| r.lambda_r != 0.0) else {
        return Ok(LossVars { total: supervised, supervised, rec: None });
    };
    let mut parts = vec![tape.cyl_encode(pred_l, rec.frame_grad)];
    if !unlabeled.is_empty() {
        let xu = tape.input(net.prepare_inputs(unlabeled.iter().copied()));
        let pred_u = net.forward_in(store, tape, xu, mode, trainable);
        parts.push(tape.cyl_encode(pred_u, rec.frame_grad));
    }
    // The frozen module always runs with its running statistics.
    let r = rec_loss_in(tape, rec.module, rec.module.store(), &parts, Mode::Infer, false);
    let weighted = tape.scale(r, rec.lambda_r);
    let total = tape.add(supervised, weighted);
    Ok(LossVars { total, supervised, rec: Some(r) })
}

/// `(1 / (3 (m+8) N_L)) Σ ||E(X) - Y||²`.
pub fn loss_supervised(net: &GraphUNet, batch: &[(&Pose2D, &Pose3D)], mode: Mode) -> Result<f64> {
    let mut tape = Tape::new();
    let l = total_loss_on_tape(&mut tape, net, net.store(), batch, &[], None, mode, false)?;
    Ok(tape.scalar(l.total))
}

/// Phase II objective. `lambda_r > 0` requires a reconstruction module.
pub fn loss_total(
    net: &GraphUNet,
    labeled: &[(&Pose2D, &Pose3D)],
    unlabeled: &[&Pose2D],
    module: Option<&dyn Reconstructor>,
    lambda_r: f64,
    frame_grad: bool,
    mode: Mode,
) -> Result<f64> {
    let rec = match module {
        Some(module) => Some(RecSupervision { module, lambda_r, frame_grad }),
        None if lambda_r != 0.0 => return Err(Error::MissingDictionary),
        None => None,
    };
    let mut tape = Tape::new();
    let l = total_loss_on_tape(&mut tape, net, net.store(), labeled, unlabeled, rec, mode, false)?;
    Ok(tape.scalar(l.total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase2Epoch {
    pub epoch: usize,
    pub loss_l: f64,
    /// `NaN` when the reconstruction term is off.
    pub loss_rec: f64,
    pub val_mpjpe_hand: f64,
    pub val_mpjpe_obj: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase2History {
    pub lambda_r: f64,
    pub frame_grad: bool,
    pub steps_per_epoch: usize,
    pub epochs: Vec<Phase2Epoch>,
}

impl Phase2History {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# lambda_r={} frame_grad={} steps_per_epoch={}\nepoch,L_L,L_rec,val_mpjpe_hand,val_mpjpe_obj\n",
            self.lambda_r, self.frame_grad, self.steps_per_epoch
        );
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.loss_l, e.loss_rec, e.val_mpjpe_hand, e.val_mpjpe_obj);
        }
        s
    }
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: CounterRng,
}

impl Cycler {
    fn new(n: usize, rng: CounterRng) -> Self {
        let mut c = Self { order: (0..n).collect(), pos: n, rng };
        c.reshuffle_if_done();
        c
    }

    fn reshuffle_if_done(&mut self) {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
    }

    /// `min(count, n)` distinct indices.
    fn take(&mut self, count: usize) -> Vec<usize> {
        let count = count.min(self.order.len());
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            self.reshuffle_if_done();
            let i = self.order[self.pos];
            self.pos += 1;
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }
}

fn validate(net: &GraphUNet, validation: &[(Pose2D, Pose3D)]) -> Result<(f64, f64)> {
    if validation.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let xs: Vec<&Pose2D> = validation.iter().map(|p| &p.0).collect();
    let refs: Vec<Pose3D> = validation.iter().map(|p| p.1.clone()).collect();
    let est = net.estimate_batch(&xs)?;
    Ok((mpjpe(&est, &refs, &PointGroup::Hand)?, mpjpe(&est, &refs, &PointGroup::Object)?))
}

/// Trains the estimator on explicit labeled pairs and unlabeled inputs.
/// Every epoch runs `steps_per_epoch` steps, each drawing one labeled and
/// (when the reconstruction term is on) one unlabeled mini-batch.
pub fn train_estimator(
    labeled: &[(&Pose2D, &Pose3D)],
    unlabeled: &[&Pose2D],
    rec: Option<RecSupervision<'_>>,
    cfg: &TrainConfig,
    steps_per_epoch: usize,
    validation: &[(Pose2D, Pose3D)],
) -> Result<(GraphUNet, Phase2History)> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptySet);
    }
    let labeled_3d: Vec<Pose3D> = labeled.iter().map(|p| p.1.clone()).collect();
    encode_training_poses(&labeled_3d)?;
    let rec = rec.filter(|r| r.lambda_r != 0.0);
    let mut net = GraphUNet::new(cfg.est_widths, cfg.seed)?;
    net.fit_normalization(labeled.iter().copied())?;
    let adam = AdamConfig { lr: cfg.est_lr, ..AdamConfig::default() };
    let root = CounterRng::new(cfg.seed).fork_str("phase2-batches");
    let mut lab = Cycler::new(labeled.len(), root.fork(0));
    let mut unl = Cycler::new(unlabeled.len(), root.fork(1));
    let (vh, vo) = validate(&net, validation)?;
    let mut history = Phase2History {
        lambda_r: rec.map_or(0.0, |r| r.lambda_r),
        frame_grad: cfg.frame_grad,
        steps_per_epoch,
        epochs: vec![Phase2Epoch {
            epoch: 0,
            loss_l: f64::NAN,
            loss_rec: f64::NAN,
            val_mpjpe_hand: vh,
            val_mpjpe_obj: vo,
        }],
    };
    let mut step = 0u64;
    for epoch in 1..=cfg.est_epochs {
        let (mut sum_l, mut sum_r) = (0.0, 0.0);
        let ramp = rec_ramp(epoch, cfg.rec_rampup_epochs);
        let rec = rec.map(|r| RecSupervision { lambda_r: r.lambda_r * ramp, ..r });
        for _ in 0..steps_per_epoch.max(1) {
            let lb: Vec<(&Pose2D, &Pose3D)> = lab.take(cfg.batch_size).into_iter().map(|i| labeled[i]).collect();
            let ub: Vec<&Pose2D> = if rec.is_some() {
                unl.take(cfg.unlabeled_batch()).into_iter().map(|i| unlabeled[i]).collect()
            } else {
                Vec::new()
            };
            let grads = {
                let mut tape = Tape::new();
                let loss = total_loss_on_tape(&mut tape, &net, net.store(), &lb, &ub, rec, Mode::Train, true)?;
                sum_l += tape.scalar(loss.supervised);
                sum_r += loss.rec.map_or(f64::NAN, |r| tape.scalar(r));
                tape.backward(loss.total)?
            };
            step += 1;
            let store = net.store_mut();
            store.accumulate(&grads);
            store.update_running_stats(&grads, BN_MOMENTUM);
            adam_step(store, &adam, step);
        }
        let n = steps_per_epoch.max(1) as f64;
        if !sum_l.is_finite() {
            return Err(Error::Training(format!("non-finite supervised loss at epoch {epoch}")));
        }
        let (vh, vo) = validate(&net, validation)?;
        history.epochs.push(Phase2Epoch {
            epoch,
            loss_l: sum_l / n,
            loss_rec: sum_r / n,
            val_mpjpe_hand: vh,
            val_mpjpe_obj: vo,
        });
    }
    Ok((net, history))
}

/// Phase II on a split: labeled pairs supervise directly, every frame feeds
/// the frozen reconstruction term. `module == None` trains the purely
/// supervised baseline.
pub fn train_phase2(
    split: &DatasetSplit,
    module: Option<&dyn Reconstructor>,
    cfg: &TrainConfig,
    validation: &[(Pose2D, Pose3D)],
) -> Result<(GraphUNet, Phase2History)> {
    let labeled: Vec<(&Pose2D, &Pose3D)> = split.labeled_pairs().collect();
    let unlabeled: Vec<&Pose2D> = split.unlabeled_inputs().collect();
    let rec = module.map(|module| RecSupervision { module, lambda_r: cfg.lambda_r, frame_grad: cfg.frame_grad });
    let steps = steps_per_epoch(labeled.len() + unlabeled.len(), cfg.batch_size);
    train_estimator(&labeled, &unlabeled, rec, cfg, steps, validation)
}

/// Fraction of `lambda_r` applied during `epoch` (1-based).
pub fn rec_ramp(epoch: usize, rampup: usize) -> f64 {
    if rampup == 0 {
        1.0
    } else {
        (epoch as f64 / rampup as f64).min(1.0)
    }
}

/// `ceil(frames / batch)`; identical for every arm of a comparison.
pub fn steps_per_epoch(frames: usize, batch: usize) -> usize {
    frames.div_ceil(batch.max(1)).max(1)
}

/// Inference-mode estimates split back into poses; handy for tests.
pub fn estimate_rows(net: &GraphUNet, xs: &[&Pose2D]) -> Result<Vec<Pose3D>> {
    let mut tape = Tape::new();
    let x = tape.input(net.prepare_inputs(xs.iter().copied()));
    let y = net.forward(&mut tape, x, Mode::Infer, false);
    rows_to_poses(tape.value(y))
}
