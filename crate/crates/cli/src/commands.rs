use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use graspdict::data::{
    load_dataset, mark_split, save_dataset, split_from_flags, split_semi_supervised, synth_generate, DatasetRecord,
    DatasetSplit,
};
use graspdict::diagnostics::gradient_suite;
use graspdict::dictionary::{
    encode_training_poses, load_reconstructor, train_phase1, train_reconstructor, Reconstructor, ReconstructorKind,
};
use graspdict::estimator::train_phase2;
use graspdict::eval::{
    default_thresholds, mpjpe, pck_curve, run_benchmark, sweep, EvalModel, Method, PointGroup, Runner, SweepAxis,
    ALIGNMENT_NOTE,
};
use graspdict::geometry::{encode_pose, Pose2D, Pose3D, HAND_JOINTS};
use graspdict::numerics::Checkpoint;
use graspdict::{Error, Result, TrainConfig};

use crate::{Command, ConfigArgs, GroupArg, KindArg, DATA_DIR_ENV};

const DICT_FILE: &str = "dict.ckpt";
const EST_FILE: &str = "est.ckpt";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { sequences, frames, seed, out } => synth(sequences, frames, seed, &out),
        Command::Split { data, ratio, seed, out } => split(&data, ratio, seed, &out),
        Command::TrainDict { data, out, kind, presplit, cfg } => train_dict(&data, &out, kind, presplit, &cfg),
        Command::TrainEst { data, dict, out, validation, presplit, cfg } => {
            train_est(&data, dict.as_deref(), &out, validation.as_deref(), presplit, &cfg)
        }
        Command::Eval { ckpt, data, out, pck_group } => eval(&ckpt, &data, out.as_deref(), pck_group),
        Command::Benchmark { data, test, out, methods, pseudo, cfg } => {
            benchmark(&data, &test, &out, methods, pseudo, &cfg)
        }
        Command::Sweep { data, test, axis, values, out, baseline, cfg } => {
            run_sweep(&data, &test, &axis, &values, &out, baseline, &cfg)
        }
        Command::Transform { data, out } => transform(&data, &out),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

/// Relative input paths are taken from the data directory when it is set.
fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() && !dir.is_empty() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

/// Names the file in I/O errors.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load(p: &Path) -> Result<Vec<DatasetRecord>> {
    let path = data_path(p);
    with_path(&path, load_dataset(&path))
}

fn load_checkpoint(p: &Path, file: &str) -> Result<Checkpoint> {
    let path = if p.is_dir() { p.join(file) } else { p.to_path_buf() };
    with_path(&path, Checkpoint::load(&path))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn build_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::parse_text(&with_path(p, fs::read_to_string(p).map_err(Error::from))?)?,
        None => TrainConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Validation { field: kv.clone(), message: "expected KEY=VALUE".into() })?;
        cfg.set(k, v)?;
    }
    macro_rules! flag {
        ($($f:ident),*) => {$(if let Some(v) = args.$f.clone() { cfg.$f = v; })*};
    }
    flag!(seed, seeds, k, ratio, lambda_r, lambda_dict, lr, est_lr, batch_size, dict_epochs, est_epochs, threads);
    cfg.validate()?;
    Ok(cfg)
}

fn make_split(records: &[DatasetRecord], presplit: bool, cfg: &TrainConfig) -> Result<DatasetSplit> {
    if presplit {
        split_from_flags(records)
    } else {
        split_semi_supervised(records, cfg.ratio, cfg.seed)
    }
}

fn synth(sequences: usize, frames: usize, seed: u64, out: &Path) -> Result<()> {
    if sequences == 0 || frames == 0 {
        return Err(Error::Validation {
            field: "sequences".into(),
            message: "need at least one sequence and frame".into(),
        });
    }
    let records = synth_generate(sequences, frames, seed);
    save_dataset(out, &records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn split(data: &Path, ratio: f64, seed: u64, out: &Path) -> Result<()> {
    let records = load(data)?;
    let s = split_semi_supervised(&records, ratio, seed)?;
    save_dataset(out, &mark_split(&records, &s))?;
    println!(
        "labeled {} of {} frames in {} subsequences",
        s.labeled.len(),
        s.labeled.len() + s.unlabeled.len(),
        s.labeled_subsequences.len()
    );
    Ok(())
}

fn train_dict(data: &Path, out: &Path, kind: KindArg, presplit: bool, args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let records = load(data)?;
    let s = make_split(&records, presplit, &cfg)?;
    let poses: Vec<Pose3D> = s.labeled_pairs().map(|(_, y)| y.clone()).collect();
    let (module, history): (Box<dyn Reconstructor>, _) = match kind {
        KindArg::Dict => {
            let (m, h) = train_phase1(&poses, &cfg)?;
            (Box::new(m), h)
        }
        KindArg::Ae => {
            let (h, skipped) = encode_training_poses(&poses)?;
            let (m, mut hist) = train_reconstructor(ReconstructorKind::Autoencoder, &h, &cfg)?;
            hist.skipped = skipped;
            (m, hist)
        }
    };
    fs::create_dir_all(out)?;
    module.save(&out.join(DICT_FILE))?;
    write(&out.join("phase1_history.csv"), &history.to_csv())?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    println!(
        "{} on {} labeled poses: L_rec {:.6} -> {:.6}",
        module.kind().as_str(),
        poses.len(),
        history.initial_loss_rec(),
        history.final_loss_rec()
    );
    Ok(())
}

fn annotated(records: &[DatasetRecord]) -> Result<Vec<Pose3D>> {
    records
        .iter()
        .map(|r| {
            r.pose3d
                .clone()
                .ok_or_else(|| Error::MissingLabels { sequence_id: r.sequence_id.clone(), frame_idx: r.frame_idx })
        })
        .collect()
}

fn train_est(
    data: &Path,
    dict: Option<&Path>,
    out: &Path,
    validation: Option<&Path>,
    presplit: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let cfg = build_config(args)?;
    if dict.is_none() && cfg.lambda_r != 0.0 {
        return Err(Error::Validation {
            field: "dict".into(),
            message: "lambda_r > 0 needs a Phase I checkpoint; pass --lambda-r 0 to train without one".into(),
        });
    }
    let module = match dict {
        Some(p) => Some(load_reconstructor(&load_checkpoint(p, DICT_FILE)?)?),
        None => None,
    };
    let records = load(data)?;
    let s = make_split(&records, presplit, &cfg)?;
    let validation: Vec<(Pose2D, Pose3D)> = match validation {
        Some(p) => {
            let v = load(p)?;
            let refs = annotated(&v)?;
            v.into_iter().map(|r| r.pose2d).zip(refs).collect()
        }
        None => Vec::new(),
    };
    let (net, history) = train_phase2(&s, module.as_deref(), &cfg, &validation)?;
    fs::create_dir_all(out)?;
    net.checkpoint().save(out.join(EST_FILE))?;
    write(&out.join("phase2_history.csv"), &history.to_csv())?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let last = history.epochs.last().expect("history has the initial row");
    println!(
        "trained on {} labeled and {} unlabeled frames; final L_L {:.6}",
        s.labeled.len(),
        s.unlabeled.len(),
        last.loss_l
    );
    Ok(())
}

fn group(g: GroupArg) -> PointGroup {
    match g {
        GroupArg::Hand => PointGroup::Hand,
        GroupArg::Object => PointGroup::Object,
        GroupArg::All => PointGroup::All,
        GroupArg::Wrist => PointGroup::wrist(),
    }
}

fn eval(ckpt: &Path, data: &Path, out: Option<&Path>, pck_group: GroupArg) -> Result<()> {
    let model = EvalModel::from_checkpoint(&load_checkpoint(ckpt, EST_FILE)?)?;
    let records = load(data)?;
    let refs = annotated(&records)?;
    let est = model.predict(&records)?;
    let hand = mpjpe(&est, &refs, &PointGroup::Hand)?;
    let obj = mpjpe(&est, &refs, &PointGroup::Object)?;
    let all = mpjpe(&est, &refs, &PointGroup::All)?;
    let thresholds = default_thresholds();
    let pck = pck_curve(&est, &refs, &thresholds, &group(pck_group))?;

    let mut metrics = format!("# {ALIGNMENT_NOTE}\nframes,mpjpe_hand,mpjpe_obj,mpjpe_all\n");
    let _ = writeln!(metrics, "{},{hand:.6},{obj:.6},{all:.6}", refs.len());
    let mut curve = format!("# {ALIGNMENT_NOTE}\nthreshold_mm,pck\n");
    for (t, p) in thresholds.iter().zip(&pck) {
        let _ = writeln!(curve, "{t},{p:.6}");
    }
    println!("# {ALIGNMENT_NOTE}");
    println!("frames {}  hand {hand:.2} mm  object {obj:.2} mm  all {all:.2} mm", refs.len());
    if let Some(dir) = out {
        write(&dir.join("metrics.csv"), &metrics)?;
        write(&dir.join("pck.csv"), &curve)?;
    }
    Ok(())
}

fn progress_runner<'d>(train: &'d [DatasetRecord], test: &'d [DatasetRecord]) -> Result<Runner<'d>> {
    Ok(Runner::new(train, test)?.with_progress(|m| eprintln!("{m}")))
}

fn benchmark(
    data: &Path,
    test: &Path,
    out: &Path,
    methods: Option<Vec<String>>,
    pseudo: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let cfg = build_config(args)?;
    let mut methods: Vec<Method> = match methods {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_>>()?,
        None => Method::TABLE.to_vec(),
    };
    if pseudo && !methods.contains(&Method::PseudoLabels) {
        methods.push(Method::PseudoLabels);
    }
    let train = load(data)?;
    let test = load(test)?;
    let runner = progress_runner(&train, &test)?;
    let report = run_benchmark(&runner, &methods, &cfg)?;
    fs::create_dir_all(out)?;
    let table = report.to_table();
    write(&out.join("report.txt"), &table)?;
    write(&out.join("report.csv"), &report.to_csv())?;
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("pck.csv"), &report.pck_csv())?;
    print!("{table}");
    Ok(())
}

fn run_sweep(
    data: &Path,
    test: &Path,
    axis: &str,
    values: &[f64],
    out: &Path,
    baseline: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let cfg = build_config(args)?;
    let axis: SweepAxis = axis.parse()?;
    let train = load(data)?;
    let test = load(test)?;
    let runner = progress_runner(&train, &test)?;
    let table = sweep(&runner, axis, values, &cfg, baseline)?;
    let csv = table.to_csv();
    write(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn transform(data: &Path, out: &Path) -> Result<()> {
    let records = load(data)?;
    let mut s = String::from("sequence_id,frame_idx");
    for j in 0..HAND_JOINTS {
        let _ = write!(s, ",rho_{j},cos_phi_{j},sin_phi_{j},z_{j}");
    }
    s.push('\n');
    let (mut written, mut skipped) = (0, 0);
    for r in &records {
        let Some(y) = &r.pose3d else {
            skipped += 1;
            continue;
        };
        let h = match encode_pose(y) {
            Ok(h) => h,
            Err(Error::DegenerateBox(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let _ = write!(s, "{},{}", r.sequence_id, r.frame_idx);
        for v in h.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
        written += 1;
    }
    write(out, &s)?;
    println!("encoded {written} poses, skipped {skipped} without a usable 3D pose");
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let checks = gradient_suite(seed)?;
    let mut failed = 0;
    for c in &checks {
        let ok = c.report.passed();
        failed += usize::from(!ok);
        println!(
            "{} {}: max relative error {:.3e} (tolerance {:.0e}, {} entries)",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.report.max_rel_error,
            c.report.tolerance,
            c.report.entries_checked
        );
    }
    if failed > 0 {
        return Err(Error::Training(format!("{failed} of {} gradient checks failed", checks.len())));
    }
    Ok(())
}
