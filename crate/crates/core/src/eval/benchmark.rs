use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use super::metrics::{default_thresholds, mpjpe, pck_curve, PointGroup};
use crate::config::TrainConfig;
use crate::data::{interpolate_pseudo_labels, split_semi_supervised, DatasetRecord, DatasetSplit};
use crate::dictionary::{
    encode_training_poses, train_phase1, train_reconstructor, DictionaryModule, ReconstructorKind,
};
use crate::error::{Error, Result};
use crate::estimator::{steps_per_epoch, train_estimator, train_phase2, GraphUNet};
use crate::geometry::{Pose2D, Pose3D};

/// Frames of the test set logged as validation after every Phase II epoch.
pub const VALIDATION_FRAMES: usize = 100;

/// Arms of the comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Every training frame labeled, no reconstruction term.
    FullySupervised,
    /// Only the labeled subsequences, no reconstruction term.
    RatioOnly,
    /// Reconstruction term from an autoencoder instead of the dictionary.
    AeReconstructor,
    /// Reconstruction term from the frozen pose dictionary module.
    Ours,
    /// Labeled frames plus temporally interpolated pseudo-labels.
    PseudoLabels,
}

impl Method {
    /// The four arms of the main comparison table.
    pub const TABLE: [Method; 4] = [Method::FullySupervised, Method::RatioOnly, Method::AeReconstructor, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::FullySupervised => "fully_supervised",
            Method::RatioOnly => "ratio_only",
            Method::AeReconstructor => "ae_reconstructor",
            Method::Ours => "ours",
            Method::PseudoLabels => "pseudo_labels",
        }
    }

    /// Methods whose result does not depend on the reconstruction settings.
    fn ignores_reconstruction(self) -> bool {
        matches!(self, Method::FullySupervised | Method::RatioOnly | Method::PseudoLabels)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::FullySupervised, Method::RatioOnly, Method::AeReconstructor, Method::Ours, Method::PseudoLabels]
            .into_iter()
            .find(|m| m.name() == s.trim().replace('-', "_"))
            .ok_or_else(|| Error::validation("method", format!("unknown method `{s}`")))
    }
}

/// Test metrics of one trained estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub mpjpe_hand: f64,
    pub mpjpe_obj: f64,
    pub mpjpe_all: f64,
    /// Hand-joint PCK at the report thresholds.
    pub pck: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Mean MPJPE over the successful seeds of a method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mpjpe_hand: f64,
    pub mpjpe_obj: f64,
    pub mpjpe_all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub runs: Vec<RunMetrics>,
    pub failures: Vec<RunFailure>,
}

impl MethodResult {
    fn collect(method: Method, seeds: &[u64], outcomes: Vec<std::result::Result<RunMetrics, String>>) -> Self {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (&seed, outcome) in seeds.iter().zip(outcomes) {
            match outcome {
                Ok(m) => runs.push(m),
                Err(error) => failures.push(RunFailure { seed, error }),
            }
        }
        Self { method, runs, failures }
    }

    /// `None` when every seed failed.
    pub fn summary(&self) -> Option<Summary> {
        if self.runs.is_empty() {
            return None;
        }
        let n = self.runs.len() as f64;
        let mean = |f: fn(&RunMetrics) -> f64| self.runs.iter().map(f).sum::<f64>() / n;
        Some(Summary {
            mpjpe_hand: mean(|r| r.mpjpe_hand),
            mpjpe_obj: mean(|r| r.mpjpe_obj),
            mpjpe_all: mean(|r| r.mpjpe_all),
        })
    }

    pub fn mean_pck(&self) -> Option<Vec<f64>> {
        let first = self.runs.first()?;
        let n = self.runs.len() as f64;
        Some((0..first.pck.len()).map(|i| self.runs.iter().map(|r| r.pck[i]).sum::<f64>() / n).collect())
    }
}

type DictSlot = Arc<OnceLock<std::result::Result<Arc<DictionaryModule>, String>>>;

type Progress<'d> = Box<dyn Fn(&str) + Send + Sync + 'd>;

/// Trains and evaluates arms on a fixed train/test pair. Phase I modules and
/// finished runs are cached by the settings they depend on, so a benchmark
/// followed by sweeps on the same runner does not repeat work.
pub struct Runner<'d> {
    train: &'d [DatasetRecord],
    test_inputs: Vec<&'d Pose2D>,
    test_refs: Vec<Pose3D>,
    validation: Vec<(Pose2D, Pose3D)>,
    thresholds: Vec<f64>,
    dictionaries: Mutex<HashMap<String, DictSlot>>,
    results: Mutex<HashMap<String, std::result::Result<RunMetrics, String>>>,
    progress: Option<Progress<'d>>,
}

impl<'d> Runner<'d> {
    /// Every test record must carry its 3D pose.
    pub fn new(train: &'d [DatasetRecord], test: &'d [DatasetRecord]) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut test_refs = Vec::with_capacity(test.len());
        for r in test {
            let y = r
                .pose3d
                .clone()
                .ok_or_else(|| Error::MissingLabels { sequence_id: r.sequence_id.clone(), frame_idx: r.frame_idx })?;
            test_refs.push(y);
        }
        let validation =
            test.iter().zip(&test_refs).take(VALIDATION_FRAMES).map(|(r, y)| (r.pose2d.clone(), y.clone())).collect();
        Ok(Self {
            train,
            test_inputs: test.iter().map(|r| &r.pose2d).collect(),
            test_refs,
            validation,
            thresholds: default_thresholds(),
            dictionaries: Mutex::new(HashMap::new()),
            results: Mutex::new(HashMap::new()),
            progress: None,
        })
    }

    /// Called with a short line before and after every training run.
    pub fn with_progress(mut self, f: impl Fn(&str) + Send + Sync + 'd) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    fn log(&self, msg: &str) {
        if let Some(p) = &self.progress {
            p(msg);
        }
    }

    /// Metrics of `method` trained with `cfg` (its `seed` field selects the
    /// split and initialization).
    pub fn run(&self, method: Method, cfg: &TrainConfig) -> std::result::Result<RunMetrics, String> {
        let key = run_key(method, cfg);
        if let Some(hit) = self.results.lock().unwrap().get(&key) {
            return hit.clone();
        }
        self.log(&format!(
            "start {method} seed={} k={} lambda_r={} ratio={}",
            cfg.seed, cfg.k, cfg.lambda_r, cfg.ratio
        ));
        let outcome = self.train_and_evaluate(method, cfg).map_err(|e| e.to_string());
        match &outcome {
            Ok(m) => self.log(&format!("done  {method} seed={} all={:.3} mm", cfg.seed, m.mpjpe_all)),
            Err(e) => self.log(&format!("fail  {method} seed={}: {e}", cfg.seed)),
        }
        self.results.lock().unwrap().insert(key, outcome.clone());
        outcome
    }

    /// Runs every job, spreading them over up to `threads` workers. Results
    /// come back in job order regardless of scheduling.
    pub fn run_all(
        &self,
        jobs: &[(Method, TrainConfig)],
        threads: usize,
    ) -> Vec<std::result::Result<RunMetrics, String>> {
        let workers = threads.clamp(1, jobs.len().max(1));
        if workers == 1 {
            return jobs.iter().map(|(m, c)| self.run(*m, c)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<std::result::Result<RunMetrics, String>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((m, c)) = jobs.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.run(*m, c));
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every job ran")).collect()
    }

    fn dictionary(
        &self,
        split: &DatasetSplit,
        cfg: &TrainConfig,
    ) -> std::result::Result<Arc<DictionaryModule>, String> {
        let slot = self.dictionaries.lock().unwrap().entry(phase1_key(cfg)).or_default().clone();
        slot.get_or_init(|| {
            let poses: Vec<Pose3D> = split.labeled.iter().filter_map(|f| f.pose3d.clone()).collect();
            train_phase1(&poses, cfg).map(|(m, _)| Arc::new(m)).map_err(|e| e.to_string())
        })
        .clone()
    }

    fn train_and_evaluate(&self, method: Method, cfg: &TrainConfig) -> Result<RunMetrics> {
        let split = split_semi_supervised(self.train, cfg.ratio, cfg.seed)?;
        let frames = split.labeled.len() + split.unlabeled.len();
        let steps = steps_per_epoch(frames, cfg.batch_size);
        let mut base = cfg.clone();
        base.lambda_r = 0.0;
        let (net, _) = match method {
            Method::RatioOnly => train_phase2(&split, None, &base, &self.validation)?,
            Method::FullySupervised => {
                let full = split.fully_labeled()?;
                let pairs: Vec<_> = full.labeled_pairs().collect();
                train_estimator(&pairs, &[], None, &base, steps, &self.validation)?
            }
            Method::PseudoLabels => {
                let pseudo = interpolate_pseudo_labels(&split);
                let pairs: Vec<_> = split.labeled_pairs().chain(pseudo.iter().map(|(x, y)| (x, y))).collect();
                train_estimator(&pairs, &[], None, &base, steps, &self.validation)?
            }
            Method::Ours if cfg.lambda_r == 0.0 => train_phase2(&split, None, cfg, &self.validation)?,
            Method::Ours => {
                let dict = self.dictionary(&split, cfg).map_err(Error::Training)?;
                train_phase2(&split, Some(dict.as_ref()), cfg, &self.validation)?
            }
            Method::AeReconstructor => {
                let poses: Vec<Pose3D> = split.labeled.iter().filter_map(|f| f.pose3d.clone()).collect();
                let (h, _) = encode_training_poses(&poses)?;
                let (ae, _) = train_reconstructor(ReconstructorKind::Autoencoder, &h, cfg)?;
                train_phase2(&split, Some(ae.as_ref()), cfg, &self.validation)?
            }
        };
        self.evaluate(&net, cfg.seed)
    }

    fn evaluate(&self, net: &GraphUNet, seed: u64) -> Result<RunMetrics> {
        let est = net.estimate_batch(&self.test_inputs)?;
        evaluate_poses(&est, &self.test_refs, &self.thresholds, seed)
    }
}

/// MPJPE per group and hand PCK of a set of estimates.
pub fn evaluate_poses(
    estimates: &[Pose3D],
    references: &[Pose3D],
    thresholds: &[f64],
    seed: u64,
) -> Result<RunMetrics> {
    Ok(RunMetrics {
        seed,
        mpjpe_hand: mpjpe(estimates, references, &PointGroup::Hand)?,
        mpjpe_obj: mpjpe(estimates, references, &PointGroup::Object)?,
        mpjpe_all: mpjpe(estimates, references, &PointGroup::All)?,
        pck: pck_curve(estimates, references, thresholds, &PointGroup::Hand)?,
    })
}

fn run_key(method: Method, cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.seeds.clear();
    c.threads = 1;
    if method.ignores_reconstruction() || (method == Method::Ours && c.lambda_r == 0.0) {
        let d = TrainConfig::default();
        c.k = d.k;
        c.lambda_dict = d.lambda_dict;
        c.lambda_r = 0.0;
        c.lr = d.lr;
        c.atom_lr_scale = d.atom_lr_scale;
        c.dict_epochs = d.dict_epochs;
        c.encoder_widths = d.encoder_widths;
        c.rec_rampup_epochs = d.rec_rampup_epochs;
        c.frame_grad = d.frame_grad;
        c.unlabeled_batch_size = d.unlabeled_batch_size;
    }
    // Ours with no reconstruction weight is the ratio-only baseline.
    let name = if method == Method::Ours && cfg.lambda_r == 0.0 { Method::RatioOnly } else { method };
    format!("{name}\n{}", c.to_text())
}

fn phase1_key(cfg: &TrainConfig) -> String {
    let widths: Vec<String> = cfg.encoder_widths.iter().map(|w| w.to_string()).collect();
    format!(
        "k={} lambda_dict={} lr={} atom_lr_scale={} batch={} epochs={} widths={} ratio={} seed={}",
        cfg.k,
        cfg.lambda_dict,
        cfg.lr,
        cfg.atom_lr_scale,
        cfg.batch_size,
        cfg.dict_epochs,
        widths.join(","),
        cfg.ratio,
        cfg.seed
    )
}

/// Comparison table over `cfg.seeds`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub methods: Vec<MethodResult>,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Trains every method once per seed of `cfg.seeds`, sharing splits and
/// seeds across methods. Failed runs are recorded and the rest continue.
pub fn run_benchmark(runner: &Runner<'_>, methods: &[Method], cfg: &TrainConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let seeds = effective_seeds(cfg);
    let jobs: Vec<(Method, TrainConfig)> =
        methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).map(|(m, s)| (m, with_seed(cfg, s))).collect();
    let mut outcomes = runner.run_all(&jobs, cfg.threads).into_iter();
    let results = methods
        .iter()
        .map(|&m| MethodResult::collect(m, &seeds, outcomes.by_ref().take(seeds.len()).collect()))
        .collect();
    Ok(EvalReport { config: cfg.clone(), seeds, thresholds: runner.thresholds().to_vec(), methods: results })
}

fn effective_seeds(cfg: &TrainConfig) -> Vec<u64> {
    if cfg.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.seeds.clone()
    }
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    LambdaR,
    Ratio,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::LambdaR => "lambda_r",
            SweepAxis::Ratio => "ratio",
        }
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::K => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::validation("k", format!("sweep value {value} is not a positive integer")));
                }
                cfg.k = value as usize;
            }
            SweepAxis::LambdaR => cfg.lambda_r = value,
            SweepAxis::Ratio => cfg.ratio = value,
        }
        cfg.validate()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "k" => Ok(SweepAxis::K),
            "lambda_r" => Ok(SweepAxis::LambdaR),
            "ratio" => Ok(SweepAxis::Ratio),
            other => Err(Error::validation("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub ours: MethodResult,
    /// Ratio-only run at the same point, when requested.
    pub baseline: Option<MethodResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// `max / min` of the mean all-points MPJPE over points that succeeded.
    pub fn spread(&self) -> Option<f64> {
        let v: Vec<f64> = self.points.iter().filter_map(|p| p.ours.summary()).map(|s| s.mpjpe_all).collect();
        if v.is_empty() {
            return None;
        }
        let max = v.iter().copied().fold(f64::MIN, f64::max);
        let min = v.iter().copied().fold(f64::MAX, f64::min);
        Some(max / min)
    }
}

/// Trains ours at every value of `axis` over `cfg.seeds`; with `baseline`
/// the ratio-only arm is trained at each point as well.
pub fn sweep(
    runner: &Runner<'_>,
    axis: SweepAxis,
    values: &[f64],
    cfg: &TrainConfig,
    baseline: bool,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::validation("values", "sweep needs at least one value"));
    }
    cfg.validate()?;
    let seeds = effective_seeds(cfg);
    let mut point_cfgs = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, v)?;
        point_cfgs.push(c);
    }
    let methods: &[Method] = if baseline { &[Method::Ours, Method::RatioOnly] } else { &[Method::Ours] };
    let mut jobs = Vec::new();
    for c in &point_cfgs {
        for &m in methods {
            for &s in &seeds {
                jobs.push((m, with_seed(c, s)));
            }
        }
    }
    let mut outcomes = runner.run_all(&jobs, cfg.threads).into_iter();
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut per_method =
            methods.iter().map(|&m| MethodResult::collect(m, &seeds, outcomes.by_ref().take(seeds.len()).collect()));
        let ours = per_method.next().expect("ours is always run");
        points.push(SweepPoint { value, ours, baseline: per_method.next() });
    }
    Ok(SweepTable { axis, config: cfg.clone(), seeds, points })
}
