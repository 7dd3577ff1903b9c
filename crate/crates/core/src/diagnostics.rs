//! Finite-difference checks of every trainable loss on small instances.

use crate::config::TrainConfig;
use crate::data::synth_generate;
use crate::dictionary::{
    rec_loss_in, train_phase1, AutoencoderModule, DictionaryModule, PoseDictionary, Reconstructor,
};
use crate::error::Result;
use crate::estimator::{total_loss_on_tape, train_estimator, GraphUNet, RecSupervision};
use crate::geometry::{Pose2D, Pose3D, CYL_DIM, NUM_POINTS};
use crate::numerics::{
    gradcheck, gradcheck_with, CounterRng, GradcheckOptions, GradcheckReport, Matrix, Mode, ParamKind, ParamStore,
};

/// Hidden widths of the reduced encoder used by the checks.
const SMALL_ENCODER: [usize; 7] = [12, 6, 6, 12, 6, 6, 12];

#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub name: &'static str,
    pub report: GradcheckReport,
}

fn reconstruction_check<R: Reconstructor + Clone>(
    mut model: R,
    h: &Matrix,
    lambda_dict: f64,
) -> Result<GradcheckReport> {
    let ids = model.store().trainable_ids();
    let snapshot = model.clone();
    gradcheck(
        model.store_mut(),
        &ids,
        |tape, store| {
            let x = tape.input(h.clone());
            let rec = rec_loss_in(tape, &snapshot, store, &[x], Mode::Train, true);
            Ok(match snapshot.regularizer_in(store, tape) {
                Some(d) if lambda_dict != 0.0 => {
                    let w = tape.scale(d, lambda_dict);
                    tape.add(rec, w)
                }
                _ => rec,
            })
        },
        &GradcheckOptions::default(),
    )
}

fn pairs(n_seq: usize, frames: usize, seed: u64) -> Vec<(Pose2D, Pose3D)> {
    synth_generate(n_seq, frames, seed).into_iter().filter_map(|r| r.pose3d.map(|y| (r.pose2d, y))).collect()
}

/// Runs the suite: Phase I loss through encoder and atoms, the autoencoder
/// reconstruction, the batched cylindrical transform, and the Phase II
/// losses with and without the reconstruction term.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = CounterRng::new(seed).fork_str("gradient-suite");
    let mut out = Vec::new();

    let mut dict = DictionaryModule::new(8, 3, &SMALL_ENCODER, seed)?;
    // Atoms partly outside the valid ranges so the interval terms are active.
    dict.set_atoms(&PoseDictionary::new(Matrix::from_fn(8, 3, |_, _| rng.normal() * 1.3 + 0.05))?)?;
    let h = Matrix::from_fn(8, 8, |_, _| rng.normal());
    out.push(GradientCheck {
        name: "phase1 L_rec + lambda_dict L_dict (encoder, atoms)",
        report: reconstruction_check(dict, &h, 100.0)?,
    });

    let ae = AutoencoderModule::new(8, 3, &SMALL_ENCODER, seed)?;
    out.push(GradientCheck { name: "autoencoder L_rec", report: reconstruction_check(ae, &h, 0.0)? });

    let data = pairs(2, 2, seed);
    let mut flat = Vec::with_capacity(2 * NUM_POINTS * 3);
    for (_, y) in &data[..2] {
        for v in y.to_flat() {
            flat.push(v + rng.normal() * 3.0);
        }
    }
    let target = Matrix::from_fn(2, CYL_DIM, |_, _| rng.normal() * 20.0);
    let mut store = ParamStore::new();
    let id = store.insert("points", Matrix::from_vec(2 * NUM_POINTS, 3, flat)?, ParamKind::Trainable)?;
    out.push(GradientCheck {
        name: "cylindrical transform T (hand joints and box frame)",
        report: gradcheck(
            &mut store,
            &[id],
            |tape, store| {
                let p = tape.param(store, id);
                let h = tape.cyl_encode(p, true);
                let t = tape.input(target.clone());
                Ok(tape.squared_error(h, t, 1e-3))
            },
            &GradcheckOptions::default(),
        )?,
    });

    let lab: Vec<(&Pose2D, &Pose3D)> = data[..2].iter().map(|(x, y)| (x, y)).collect();
    let unl: Vec<&Pose2D> = data[2..].iter().map(|p| &p.0).collect();
    let opts = GradcheckOptions { max_entries_per_param: Some(12), seed, ..GradcheckOptions::default() };
    let mut net = GraphUNet::new((6, 8), seed)?;
    net.fit_normalization(lab.iter().copied())?;
    let ids = net.store().trainable_ids();
    let snapshot = net.clone();
    out.push(GradientCheck {
        name: "phase2 L_L (estimator)",
        report: gradcheck(
            net.store_mut(),
            &ids,
            |tape, store| Ok(total_loss_on_tape(tape, &snapshot, store, &lab, &unl, None, Mode::Train, true)?.total),
            &opts,
        )?,
    });

    let cfg = TrainConfig {
        encoder_widths: vec![16, 8, 8, 16, 8, 8, 16],
        est_widths: (6, 8),
        k: 4,
        dict_epochs: 2,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    let poses: Vec<Pose3D> = pairs(4, 5, seed + 1).into_iter().map(|p| p.1).collect();
    let (frozen, _) = train_phase1(&poses, &cfg)?;
    // At random initialization the estimates sit far outside the frozen
    // encoder's training range, where it is steep enough for finite
    // differences to drown in round-off; a short supervised warm start
    // moves the check to a representative point.
    let warm = TrainConfig { est_epochs: 300, batch_size: 4, est_lr: 3e-3, seed, ..cfg.clone() };
    let all: Vec<(&Pose2D, &Pose3D)> = data.iter().map(|(x, y)| (x, y)).collect();
    let mut net = train_estimator(&all, &[], None, &warm, 1, &[])?.0;
    let ids = net.store().trainable_ids();
    let snapshot = net.clone();
    out.push(GradientCheck {
        name: "phase2 L_L + lambda_r L_rec through T (estimator)",
        report: gradcheck_with(
            net.store_mut(),
            &ids,
            &frozen,
            |tape, store, frozen| {
                let rec = RecSupervision { module: frozen, lambda_r: 100.0, frame_grad: true };
                Ok(total_loss_on_tape(tape, &snapshot, store, &lab, &unl, Some(rec), Mode::Train, true)?.total)
            },
            &opts,
        )?,
    });
    Ok(out)
}
