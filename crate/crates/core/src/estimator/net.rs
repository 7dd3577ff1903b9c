//! Graph U-net lifting 2D keypoints to 3D camera coordinates.
//!
//! Every graph convolution computes `ReLU(BN((A_base + A_learn) Z W))`, where
//! `A_base` is the row-normalized skeleton of its level and `A_learn` starts
//! at zero. Levels have 29, 14 and 7 nodes; the decoder adds the encoder
//! activation of the same level after unpooling.

use super::graph::{clusters_level1, clusters_level2, pooling_matrix, unpooling_matrix, SkeletonGraph};
use crate::config::BN_EPS;
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D, NUM_POINTS};
use crate::numerics::{Checkpoint, CounterRng, Matrix, Mode, ParamId, ParamKind, ParamStore, Tape, Var};

/// Channel width symbols used by the layer plan.
#[derive(Clone, Copy)]
enum W {
    In,
    Narrow,
    Wide,
}

#[derive(Clone, Copy)]
enum Step {
    Conv(usize, W, W),
    Pool(usize),
    Unpool(usize),
}

const PLAN: [Step; 14] = [
    Step::Conv(0, W::In, W::Narrow),
    Step::Conv(0, W::Narrow, W::Narrow),
    Step::Pool(0),
    Step::Conv(1, W::Narrow, W::Wide),
    Step::Conv(1, W::Wide, W::Wide),
    Step::Pool(1),
    Step::Conv(2, W::Wide, W::Wide),
    Step::Conv(2, W::Wide, W::Wide),
    Step::Unpool(1),
    Step::Conv(1, W::Wide, W::Wide),
    Step::Conv(1, W::Wide, W::Narrow),
    Step::Unpool(0),
    Step::Conv(0, W::Narrow, W::Narrow),
    Step::Conv(0, W::Narrow, W::Narrow),
];

#[derive(Clone, Debug)]
struct GcLayer {
    level: usize,
    w: ParamId,
    a_learn: ParamId,
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct Topology {
    a_base: [Matrix; 3],
    pool: [Matrix; 2],
    unpool: [Matrix; 2],
}

impl Topology {
    fn build() -> Self {
        let g0 = SkeletonGraph::hand_object();
        let c1 = clusters_level1();
        let g1 = g0.coarsen(&c1);
        let c2 = clusters_level2();
        let g2 = g1.coarsen(&c2);
        Self {
            a_base: [g0.normalized(), g1.normalized(), g2.normalized()],
            pool: [pooling_matrix(&c1, g0.num_nodes()), pooling_matrix(&c2, g1.num_nodes())],
            unpool: [unpooling_matrix(&c1, g0.num_nodes()), unpooling_matrix(&c2, g1.num_nodes())],
        }
    }
}

/// Estimator parameters `θ_p` plus input/output normalization buffers.
#[derive(Clone, Debug)]
pub struct GraphUNet {
    store: ParamStore,
    widths: (usize, usize),
    layers: Vec<GcLayer>,
    head_w: ParamId,
    head_b: ParamId,
    in_mean: ParamId,
    in_std: ParamId,
    out_mean: ParamId,
    out_std: ParamId,
    topo: Topology,
}

fn name(l: usize, f: &str) -> String {
    format!("est.gc{l}.{f}")
}

impl GraphUNet {
    pub fn new(widths: (usize, usize), seed: u64) -> Result<Self> {
        if widths.0 == 0 || widths.1 == 0 {
            return Err(Error::validation("est_widths", "widths must be positive"));
        }
        let topo = Topology::build();
        let mut rng = CounterRng::new(seed).fork_str("estimator");
        let mut store = ParamStore::new();
        let width = |w: W| match w {
            W::In => 2,
            W::Narrow => widths.0,
            W::Wide => widths.1,
        };
        let mut layers = Vec::new();
        for step in PLAN {
            if let Step::Conv(level, a, b) = step {
                let (cin, cout) = (width(a), width(b));
                let l = layers.len() + 1;
                let n = topo.a_base[level].rows();
                let std = (2.0 / cin as f64).sqrt();
                layers.push(GcLayer {
                    level,
                    w: store.insert(
                        name(l, "W"),
                        Matrix::from_fn(cin, cout, |_, _| rng.normal() * std),
                        ParamKind::Trainable,
                    )?,
                    a_learn: store.insert(name(l, "A_learn"), Matrix::zeros(n, n), ParamKind::Trainable)?,
                    gamma: store.insert(name(l, "bn_gamma"), Matrix::filled(1, cout, 1.0), ParamKind::Trainable)?,
                    beta: store.insert(name(l, "bn_beta"), Matrix::zeros(1, cout), ParamKind::Trainable)?,
                    mean: store.insert(name(l, "bn_mean"), Matrix::zeros(1, cout), ParamKind::Buffer)?,
                    var: store.insert(name(l, "bn_var"), Matrix::filled(1, cout, 1.0), ParamKind::Buffer)?,
                });
            }
        }
        let std = (2.0 / (widths.0 + 3) as f64).sqrt();
        let head_w = store.insert(
            "est.head.W",
            Matrix::from_fn(widths.0, 3, |_, _| rng.normal() * std),
            ParamKind::Trainable,
        )?;
        let head_b = store.insert("est.head.b", Matrix::zeros(1, 3), ParamKind::Trainable)?;
        let in_mean = store.insert("est.norm.in_mean", Matrix::zeros(1, 2), ParamKind::Buffer)?;
        let in_std = store.insert("est.norm.in_std", Matrix::filled(1, 2, 1.0), ParamKind::Buffer)?;
        let out_mean = store.insert("est.norm.out_mean", Matrix::zeros(1, 3), ParamKind::Buffer)?;
        let out_std = store.insert("est.norm.out_std", Matrix::filled(1, 3, 1.0), ParamKind::Buffer)?;
        Ok(Self { store, widths, layers, head_w, head_b, in_mean, in_std, out_mean, out_std, topo })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn widths(&self) -> (usize, usize) {
        self.widths
    }

    /// Sets the 2D input and 3D output statistics from labeled pairs:
    /// per-coordinate mean and standard deviation over all points.
    pub fn fit_normalization<'p>(&mut self, pairs: impl IntoIterator<Item = (&'p Pose2D, &'p Pose3D)>) -> Result<()> {
        let (mut s2, mut q2, mut s3, mut q3, mut n) = ([0.0; 2], [0.0; 2], [0.0; 3], [0.0; 3], 0usize);
        for (x, y) in pairs {
            for c in x.points().column_iter() {
                for d in 0..2 {
                    s2[d] += c[d];
                    q2[d] += c[d] * c[d];
                }
            }
            for c in y.points().column_iter() {
                for d in 0..3 {
                    s3[d] += c[d];
                    q3[d] += c[d] * c[d];
                }
            }
            n += NUM_POINTS;
        }
        if n == 0 {
            return Err(Error::EmptySet);
        }
        let nf = n as f64;
        let stats = |s: &[f64], q: &[f64]| -> (Matrix, Matrix) {
            let mean: Vec<f64> = s.iter().map(|v| v / nf).collect();
            let std: Vec<f64> = q.iter().zip(&mean).map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(1e-6)).collect();
            (Matrix::from_vec(1, s.len(), mean).unwrap(), Matrix::from_vec(1, s.len(), std).unwrap())
        };
        let (m2, d2) = stats(&s2, &q2);
        let (m3, d3) = stats(&s3, &q3);
        *self.store.value_mut(self.in_mean) = m2;
        *self.store.value_mut(self.in_std) = d2;
        *self.store.value_mut(self.out_mean) = m3;
        *self.store.value_mut(self.out_std) = d3;
        Ok(())
    }

    /// Normalized `[B*29, 2]` input block.
    pub fn prepare_inputs<'p>(&self, xs: impl IntoIterator<Item = &'p Pose2D>) -> Matrix {
        let mean = self.store.value(self.in_mean);
        let std = self.store.value(self.in_std);
        let mut data = Vec::new();
        for x in xs {
            for c in x.points().column_iter() {
                for d in 0..2 {
                    data.push((c[d] - mean.data()[d]) / std.data()[d]);
                }
            }
        }
        let rows = data.len() / 2;
        Matrix::from_vec(rows, 2, data).expect("two values per row")
    }

    /// Forward pass on a prepared block; returns `[B*29, 3]` in millimeters.
    pub fn forward_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        x: Var,
        mode: Mode,
        trainable: bool,
    ) -> Var {
        let read =
            |tape: &mut Tape<'a>, id: ParamId| if trainable { tape.param(store, id) } else { tape.frozen(store, id) };
        let mut h = x;
        let mut skips: Vec<Var> = Vec::new();
        let mut next = 0;
        for (i, step) in PLAN.iter().enumerate() {
            match *step {
                Step::Conv(level, _, _) => {
                    let layer = &self.layers[next];
                    debug_assert_eq!(layer.level, level);
                    next += 1;
                    let base = tape.input(self.topo.a_base[level].clone());
                    let learn = read(tape, layer.a_learn);
                    let adj = tape.add(base, learn);
                    let w = read(tape, layer.w);
                    let mixed = tape.node_mix(adj, h);
                    let z = tape.matmul(mixed, w);
                    let gamma = read(tape, layer.gamma);
                    let beta = read(tape, layer.beta);
                    let z = match mode {
                        Mode::Train => {
                            let (out, mean, var) = tape.batch_norm_train(z, gamma, beta, BN_EPS);
                            tape.record_running(store, layer.mean, mean);
                            tape.record_running(store, layer.var, var);
                            out
                        }
                        Mode::Infer => tape.batch_norm_infer(
                            z,
                            gamma,
                            beta,
                            store.value(layer.mean),
                            store.value(layer.var),
                            BN_EPS,
                        ),
                    };
                    h = tape.relu(z);
                    if matches!(PLAN.get(i + 1), Some(Step::Pool(_))) {
                        skips.push(h);
                    }
                }
                Step::Pool(l) => {
                    let p = tape.input(self.topo.pool[l].clone());
                    h = tape.node_mix(p, h);
                }
                Step::Unpool(l) => {
                    let u = tape.input(self.topo.unpool[l].clone());
                    let up = tape.node_mix(u, h);
                    h = tape.add(up, skips.pop().expect("one skip per pooling step"));
                }
            }
        }
        let w = read(tape, self.head_w);
        let b = read(tape, self.head_b);
        let out = tape.matmul(h, w);
        let out = tape.add_row(out, b);
        let rows = tape.value(out).rows();
        let std = self.store_row(store, self.out_std);
        let mean = self.store_row(store, self.out_mean);
        let scale = Matrix::from_fn(rows, 3, |_, c| std[c]);
        let shift = Matrix::from_fn(rows, 3, |_, c| mean[c]);
        tape.affine(out, scale, &shift)
    }

    fn store_row(&self, store: &ParamStore, id: ParamId) -> Vec<f64> {
        store.value(id).data().to_vec()
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var, mode: Mode, trainable: bool) -> Var {
        self.forward_in(&self.store, tape, x, mode, trainable)
    }

    /// Inference-mode estimates.
    pub fn estimate_batch(&self, xs: &[&Pose2D]) -> Result<Vec<Pose3D>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(256) {
            let mut tape = Tape::new();
            let x = tape.input(self.prepare_inputs(chunk.iter().copied()));
            let y = self.forward(&mut tape, x, Mode::Infer, false);
            out.extend(rows_to_poses(tape.value(y))?);
        }
        Ok(out)
    }

    pub fn estimate(&self, x: &Pose2D) -> Result<Pose3D> {
        Ok(self.estimate_batch(&[x])?.remove(0))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store);
        ck.meta.insert("est.kind".into(), "graph_unet".into());
        ck.meta.insert("est.widths".into(), format!("{},{}", self.widths.0, self.widths.1));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("est.kind") != Some("graph_unet") {
            return Err(Error::Checkpoint("not a graph estimator checkpoint".into()));
        }
        let widths: Vec<usize> = ck
            .meta("est.widths")
            .unwrap_or("")
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Checkpoint("bad est.widths".into())))
            .collect::<Result<_>>()?;
        if widths.len() != 2 {
            return Err(Error::Checkpoint("bad est.widths".into()));
        }
        let mut net = Self::new((widths[0], widths[1]), 0)?;
        ck.load_into(&mut net.store)?;
        Ok(net)
    }
}

/// Splits a `[B*29, 3]` block into poses.
pub(crate) fn rows_to_poses(m: &Matrix) -> Result<Vec<Pose3D>> {
    m.data().chunks(3 * NUM_POINTS).map(Pose3D::from_flat).collect()
}

/// Stacks poses into a `[B*29, 3]` block.
pub(crate) fn poses_to_rows<'p>(ys: impl IntoIterator<Item = &'p Pose3D>) -> Matrix {
    let data: Vec<f64> = ys.into_iter().flat_map(|y| y.to_flat()).collect();
    let rows = data.len() / 3;
    Matrix::from_vec(rows, 3, data).expect("three values per row")
}
