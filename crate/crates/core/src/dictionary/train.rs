//! Phase I: fit the reconstruction module on labeled cylindrical poses.

use std::fmt::Write as _;

use super::losses::{rec_loss_on_tape, stack};
use super::module::{AutoencoderModule, DictionaryModule, Reconstructor, ReconstructorKind};
use super::PoseDictionary;
use crate::config::{TrainConfig, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::geometry::{encode_pose, CylPoseVector, Pose3D};
use crate::numerics::{adam_step, kmeans, AdamConfig, CounterRng, Matrix, Mode, Tape};

/// Largest tolerated fraction of poses with a degenerate box.
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;

/// Atoms initialized to k-means centers of the labeled cylindrical poses.
/// With fewer poses than atoms, every pose becomes an atom and the rest are
/// random convex combinations of two poses.
pub fn init_dictionary(h_labeled: &[CylPoseVector], k: usize, seed: u64) -> Result<PoseDictionary> {
    let n = h_labeled.len();
    if n == 0 || k == 0 {
        return Err(Error::TooFewPoints { needed: k.max(1), got: n });
    }
    let points = stack(h_labeled)?;
    if n >= k {
        return PoseDictionary::new(kmeans(&points, k, seed)?.centers.transpose());
    }
    let mut rng = CounterRng::new(seed).fork_str("extra-atoms");
    let mut centers = Matrix::zeros(k, points.cols());
    for i in 0..n {
        centers.row_mut(i).copy_from_slice(points.row(i));
    }
    for c in n..k {
        let (a, b) = (rng.below(n), rng.below(n));
        let t = rng.uniform();
        for (dst, (x, y)) in centers.row_mut(c).iter_mut().zip(points.row(a).iter().zip(points.row(b))) {
            *dst = (1.0 - t) * x + t * y;
        }
    }
    PoseDictionary::new(centers.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1Epoch {
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_dict: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1History {
    pub kind: ReconstructorKind,
    pub k: usize,
    pub lambda_dict: f64,
    /// Row 0 is evaluated before the first update; later rows average the
    /// mini-batch losses of that epoch.
    pub epochs: Vec<Phase1Epoch>,
    /// Indices of input poses dropped for a degenerate box.
    pub skipped: Vec<usize>,
}

impl Phase1History {
    pub fn initial_loss_rec(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss_rec)
    }

    pub fn final_loss_rec(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss_rec)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# kind={} k={} lambda_dict={} skipped={}\nepoch,L_rec,L_dict,L_pdl\n",
            self.kind.as_str(),
            self.k,
            self.lambda_dict,
            self.skipped.len()
        );
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.loss_rec, e.loss_dict, e.loss_total);
        }
        s
    }
}

/// Encodes every pose against its own box, skipping degenerate boxes.
pub fn encode_training_poses(poses: &[Pose3D]) -> Result<(Vec<CylPoseVector>, Vec<usize>)> {
    let mut h = Vec::with_capacity(poses.len());
    let mut skipped = Vec::new();
    for (i, y) in poses.iter().enumerate() {
        match encode_pose(y) {
            Ok(v) => h.push(v),
            Err(Error::DegenerateBox(_)) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    if !poses.is_empty() && skipped.len() as f64 > MAX_SKIPPED_FRACTION * poses.len() as f64 {
        return Err(Error::Training(format!("{} of {} poses have a degenerate box", skipped.len(), poses.len())));
    }
    Ok((h, skipped))
}

/// Trains the dictionary module on labeled 3D poses.
pub fn train_phase1(labeled: &[Pose3D], cfg: &TrainConfig) -> Result<(DictionaryModule, Phase1History)> {
    if labeled.is_empty() {
        return Err(Error::EmptySet);
    }
    let (h, skipped) = encode_training_poses(labeled)?;
    let mut module = DictionaryModule::new(h[0].len(), cfg.k, &cfg.encoder_widths, cfg.seed)?;
    module.set_atoms(&init_dictionary(&h, cfg.k, cfg.seed)?)?;
    let atoms = module.atoms_id();
    module.store_mut().set_lr_scale(atoms, cfg.atom_lr_scale);
    let mut history = fit(&mut module, &h, cfg, cfg.lambda_dict)?;
    history.skipped = skipped;
    Ok((module, history))
}

/// Phase I for either kind of reconstructor on precomputed cylindrical vectors.
pub fn train_reconstructor(
    kind: ReconstructorKind,
    h: &[CylPoseVector],
    cfg: &TrainConfig,
) -> Result<(Box<dyn Reconstructor>, Phase1History)> {
    if h.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = h[0].len();
    match kind {
        ReconstructorKind::Dictionary => {
            let mut m = DictionaryModule::new(dim, cfg.k, &cfg.encoder_widths, cfg.seed)?;
            m.set_atoms(&init_dictionary(h, cfg.k, cfg.seed)?)?;
            let atoms = m.atoms_id();
            m.store_mut().set_lr_scale(atoms, cfg.atom_lr_scale);
            let hist = fit(&mut m, h, cfg, cfg.lambda_dict)?;
            Ok((Box::new(m), hist))
        }
        ReconstructorKind::Autoencoder => {
            let mut m = AutoencoderModule::new(dim, cfg.k, &cfg.encoder_widths, cfg.seed)?;
            let hist = fit(&mut m, h, cfg, 0.0)?;
            Ok((Box::new(m), hist))
        }
    }
}

/// Evaluates `(L_rec, L_dict)` over the whole set with batch statistics and no updates.
fn full_loss<R: Reconstructor>(model: &R, data: &Matrix) -> (f64, f64) {
    let mut tape = Tape::new();
    let h = tape.input(data.clone());
    let rec = rec_loss_on_tape(&mut tape, model, &[h], Mode::Train, false);
    let dict = model.regularizer(&mut tape).map_or(0.0, |v| tape.scalar(v));
    (tape.scalar(rec), dict)
}

/// Mini-batch index lists; a trailing batch of one is merged into its
/// predecessor because batch statistics of a single sample are degenerate.
pub(crate) fn minibatches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().unwrap().len() == 1 {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

pub(crate) fn gather_rows(data: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), data.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(data.row(i));
    }
    out
}

fn fit<R: Reconstructor>(
    model: &mut R,
    h: &[CylPoseVector],
    cfg: &TrainConfig,
    lambda_dict: f64,
) -> Result<Phase1History> {
    cfg.validate()?;
    let data = stack(h)?;
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut rng = CounterRng::new(cfg.seed).fork_str("phase1-batches");
    let (rec0, dict0) = full_loss(model, &data);
    let mut epochs =
        vec![Phase1Epoch { epoch: 0, loss_rec: rec0, loss_dict: dict0, loss_total: rec0 + lambda_dict * dict0 }];
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut step = 0u64;
    for epoch in 1..=cfg.dict_epochs {
        rng.shuffle(&mut order);
        let (mut sum_rec, mut sum_dict, mut batches) = (0.0, 0.0, 0usize);
        for idx in minibatches(&order, cfg.batch_size) {
            let batch = gather_rows(&data, &idx);
            let grads = {
                let mut tape = Tape::new();
                let x = tape.input(batch);
                let rec = rec_loss_on_tape(&mut tape, &*model, &[x], Mode::Train, true);
                let mut loss = rec;
                let mut dict = 0.0;
                if lambda_dict != 0.0 {
                    if let Some(d) = model.regularizer(&mut tape) {
                        dict = tape.scalar(d);
                        let weighted = tape.scale(d, lambda_dict);
                        loss = tape.add(rec, weighted);
                    }
                }
                sum_rec += tape.scalar(rec);
                sum_dict += dict;
                tape.backward(loss)?
            };
            batches += 1;
            step += 1;
            let store = model.store_mut();
            store.accumulate(&grads);
            store.update_running_stats(&grads, BN_MOMENTUM);
            adam_step(store, &adam, step);
        }
        let (rec, dict) = (sum_rec / batches as f64, sum_dict / batches as f64);
        if !rec.is_finite() {
            return Err(Error::Training(format!("non-finite reconstruction loss at epoch {epoch}")));
        }
        epochs.push(Phase1Epoch { epoch, loss_rec: rec, loss_dict: dict, loss_total: rec + lambda_dict * dict });
    }
    Ok(Phase1History { kind: model.kind(), k: cfg.k, lambda_dict, epochs, skipped: Vec::new() })
}
