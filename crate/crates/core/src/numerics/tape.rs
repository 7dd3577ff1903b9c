//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are either
//! owned by the tape or borrowed from a [`ParamStore`] or caller constants,
//! so reading large weight matrices costs nothing. [`Tape::backward`] consumes
//! the tape and returns [`Gradients`] keyed by parameter, which a store then
//! absorbs with [`ParamStore::accumulate`].

use super::matrix::{gemm, gemm_raw, Matrix};
use super::params::{ParamId, ParamKey, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an operation whose forward value is computed outside the tape.
pub trait CustomOp {
    /// Gradients for each input, given the upstream gradient of the output.
    /// `None` means "no gradient flows to this input".
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>>;
}

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamKey),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, Matrix),
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64>, batch_stats: bool },
    SoftmaxRows(Var),
    SquaredError(Var, Var, f64),
    Interval { x: Var, lo: Matrix, hi: Matrix, weight: Matrix },
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    NodeMix { adj: Var, z: Var, n_in: usize, n_out: usize },
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
}

/// Batch-norm statistics recorded in training mode, destined for a running buffer.
struct RunningUpdate {
    key: ParamKey,
    batch: Matrix,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    running: Vec<RunningUpdate>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Output of [`Tape::backward`].
pub struct Gradients {
    params: Vec<(ParamKey, Matrix)>,
    leaves: Vec<(Var, Matrix)>,
    running: Vec<RunningUpdate>,
}

impl Gradients {
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (&ParamKey, &Matrix)> {
        self.params.iter().map(|(k, g)| (k, g))
    }

    pub(crate) fn running_updates(&self) -> impl Iterator<Item = (&ParamKey, &Matrix)> {
        self.running.iter().map(|u| (&u.key, &u.batch))
    }

    /// Gradient of a leaf created with [`Tape::input_with_grad`] or a parameter.
    pub fn of(&self, var: Var) -> Option<&Matrix> {
        self.leaves.iter().find(|(v, _)| *v == var).map(|(_, g)| g)
    }

    /// Gradient of a parameter read from `store`, or `None` if it was unreachable.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Option<&Matrix> {
        let key = store.key(id);
        self.params.iter().find(|(k, _)| *k == key).map(|(_, g)| g)
    }

    pub fn num_running_updates(&self) -> usize {
        self.running.len()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), running: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Borrowed constant (frozen weights, running statistics).
    pub fn constant(&mut self, m: &'a Matrix) -> Var {
        self.nodes.push(Node { value: Value::Borrowed(m), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is reported through [`Gradients::of`].
    pub fn input_with_grad(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Trainable parameter read from `store`.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(store.value(id)),
            op: Op::Param(store.key(id)),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable read of a parameter (frozen module).
    pub fn frozen(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(out, Op::MatMul(a, b), g)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        gemm(1.0, av, false, bv, true, 0.0, &mut out);
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(out, Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(out, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(out, Op::Sub(a, b), g)
    }

    /// `a + 1 * row` with `row` of shape `1 x cols`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, out.cols()), "add_row shape");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let g = self.grad_of(a) || self.grad_of(row);
        self.push(out, Op::AddRow(a, row), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let g = self.grad_of(a);
        self.push(out, Op::Scale(a, s), g)
    }

    /// Elementwise `x * scale + shift` with constant matrices.
    pub fn affine(&mut self, x: Var, scale: Matrix, shift: &Matrix) -> Var {
        let out = self.value(x).zip_map(&scale, |a, s| a * s).zip_map(shift, |a, b| a + b);
        let g = self.grad_of(x);
        self.push(out, Op::Affine(x, scale), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let g = self.grad_of(x);
        self.push(out, Op::Relu(x), g)
    }

    /// Per-column batch normalization with mini-batch statistics. Returns the
    /// output and the batch `(mean, biased variance)`, each `1 x cols`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Matrix, Matrix) {
        let xv = self.value(x);
        let n = xv.rows() as f64;
        let mean = xv.col_sums().map(|s| s / n);
        let mut var = Matrix::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for ((v, x), m) in var.data_mut().iter_mut().zip(xv.row(r)).zip(mean.data()) {
                *v += (x - m) * (x - m);
            }
        }
        var.scale_in_place(1.0 / n);
        let out = self.bn_forward(x, gamma, beta, &mean, &var, eps, true);
        (out, mean, var)
    }

    /// Batch normalization with fixed statistics (inference mode).
    pub fn batch_norm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: &Matrix, var: &Matrix, eps: f64) -> Var {
        self.bn_forward(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_forward(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Matrix,
        var: &Matrix,
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..xhat.rows() {
            for (c, h) in xhat.row_mut(r).iter_mut().enumerate() {
                *h = (*h - mean.data()[c]) * inv_std[c];
            }
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        assert_eq!(gv.shape(), (1, cols), "batch norm gamma shape");
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * gv.data()[c] + bv.data()[c];
            }
        }
        let g = self.grad_of(x) || self.grad_of(gamma) || self.grad_of(beta);
        self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, g)
    }

    /// Queue a running-statistics update that [`ParamStore::update_running_stats`] applies.
    pub fn record_running(&mut self, store: &ParamStore, id: ParamId, batch: Matrix) {
        self.running.push(RunningUpdate { key: store.key(id), batch });
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let g = self.grad_of(x);
        self.push(out, Op::SoftmaxRows(x), g)
    }

    /// Scalar `scale * sum((a - b)^2)`.
    pub fn squared_error(&mut self, a: Var, b: Var, scale: f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "squared_error shapes");
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(Matrix::scalar(scale * s), Op::SquaredError(a, b, scale), g)
    }

    /// Scalar `sum(weight * (max(lo - x, 0) + max(x - hi, 0)))`; `hi` may hold `+inf`.
    pub fn interval_penalty(&mut self, x: Var, lo: Matrix, hi: Matrix, weight: Matrix) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), lo.shape());
        let mut s = 0.0;
        for i in 0..xv.len() {
            let d = xv.data()[i];
            s += weight.data()[i] * (interval_violation(d, lo.data()[i], hi.data()[i]));
        }
        let g = self.grad_of(x);
        self.push(Matrix::scalar(s), Op::Interval { x, lo, hi, weight }, g)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        let out = Matrix::from_fn(xv.rows(), width, |r, c| xv[(r, start + c)]);
        let g = self.grad_of(x);
        self.push(out, Op::SliceCols(x, start), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows widths");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let g = parts.iter().any(|&p| self.grad_of(p));
        let out = Matrix::from_vec(rows, cols, data).expect("concat sizes");
        self.push(out, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Per-sample node mixing: `z` stacks `B` blocks of `n_in` node rows; the
    /// result stacks `adj * z_b` (each `n_out` rows) for every block `b`.
    pub fn node_mix(&mut self, adj: Var, z: Var) -> Var {
        let (a, zv) = (self.value(adj), self.value(z));
        let (n_out, n_in) = a.shape();
        assert_eq!(zv.rows() % n_in, 0, "node_mix row count");
        let batch = zv.rows() / n_in;
        let c = zv.cols();
        let mut out = Matrix::zeros(batch * n_out, c);
        for b in 0..batch {
            gemm_raw(
                1.0,
                a.data(),
                n_in,
                false,
                &zv.data()[b * n_in * c..(b + 1) * n_in * c],
                c,
                false,
                0.0,
                &mut out.data_mut()[b * n_out * c..(b + 1) * n_out * c],
                c,
                n_out,
                n_in,
                c,
            );
        }
        let g = self.grad_of(adj) || self.grad_of(z);
        self.push(out, Op::NodeMix { adj, z, n_in, n_out }, g)
    }

    /// Records an externally computed value with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Matrix, op: Box<dyn CustomOp>) -> Var {
        let g = inputs.iter().any(|&v| self.grad_of(v));
        self.push(output, Op::Custom(inputs.to_vec(), op), g)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut params: Vec<(ParamKey, Matrix)> = Vec::new();
        let mut leaves = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let val = |v: Var| nodes[v.0].value.get();
            let mut send = |v: Var, m: Matrix| {
                if nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&m),
                        slot @ None => *slot = Some(m),
                    }
                }
            };
            match &node.op {
                Op::Leaf => leaves.push((Var(i), g)),
                Op::Param(key) => {
                    leaves.push((Var(i), g.clone()));
                    // A parameter read twice yields one merged gradient.
                    match params.iter_mut().find(|(k, _)| k == key) {
                        Some((_, acc)) => acc.add_assign(&g),
                        None => params.push((*key, g)),
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[a.0].needs_grad {
                        let mut ga = Matrix::zeros(av.rows(), av.cols());
                        gemm(1.0, &g, false, bv, true, 0.0, &mut ga);
                        send(*a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                        gemm(1.0, av, true, &g, false, 0.0, &mut gb);
                        send(*b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[a.0].needs_grad {
                        send(*a, g.matmul(bv));
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                        gemm(1.0, &g, true, av, false, 0.0, &mut gb);
                        send(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|x| -x));
                    send(*a, g);
                }
                Op::AddRow(a, row) => {
                    send(*row, g.col_sums());
                    send(*a, g);
                }
                Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
                Op::Affine(x, scale) => send(*x, g.zip_map(scale, |a, s| a * s)),
                Op::Relu(x) => {
                    let out = node.value.get();
                    send(*x, g.zip_map(out, |gv, o| if o > 0.0 { gv } else { 0.0 }));
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let gam = val(*gamma);
                    let cols = xhat.cols();
                    let rows = xhat.rows();
                    let mut g_gamma = Matrix::zeros(1, cols);
                    let mut g_beta = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g[(r, c)];
                            g_gamma.data_mut()[c] += gv * xhat[(r, c)];
                            g_beta.data_mut()[c] += gv;
                        }
                    }
                    if nodes[x.0].needs_grad {
                        let mut gx = Matrix::zeros(rows, cols);
                        if *batch_stats {
                            let nf = rows as f64;
                            for c in 0..cols {
                                let k = gam.data()[c] * inv_std[c] / nf;
                                let (sg, sgx) = (g_beta.data()[c], g_gamma.data()[c]);
                                for r in 0..rows {
                                    gx[(r, c)] = k * (nf * g[(r, c)] - sg - xhat[(r, c)] * sgx);
                                }
                            }
                        } else {
                            for r in 0..rows {
                                for c in 0..cols {
                                    gx[(r, c)] = g[(r, c)] * gam.data()[c] * inv_std[c];
                                }
                            }
                        }
                        send(*x, gx);
                    }
                    send(*gamma, g_gamma);
                    send(*beta, g_beta);
                }
                Op::SoftmaxRows(x) => {
                    let s = node.value.get();
                    let mut gx = g.clone();
                    for r in 0..s.rows() {
                        let dot: f64 = g.row(r).iter().zip(s.row(r)).map(|(a, b)| a * b).sum();
                        for (o, (&gv, &sv)) in gx.row_mut(r).iter_mut().zip(g.row(r).iter().zip(s.row(r))) {
                            *o = sv * (gv - dot);
                        }
                    }
                    send(*x, gx);
                }
                Op::SquaredError(a, b, scale) => {
                    let k = 2.0 * scale * g[(0, 0)];
                    let diff = val(*a).zip_map(val(*b), |x, y| k * (x - y));
                    if nodes[b.0].needs_grad {
                        send(*b, diff.map(|x| -x));
                    }
                    send(*a, diff);
                }
                Op::Interval { x, lo, hi, weight } => {
                    let xv = val(*x);
                    let g0 = g[(0, 0)];
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.len() {
                        let d = xv.data()[i];
                        let s = if d < lo.data()[i] {
                            -1.0
                        } else if d > hi.data()[i] {
                            1.0
                        } else {
                            0.0
                        };
                        gx.data_mut()[i] = g0 * weight.data()[i] * s;
                    }
                    send(*x, gx);
                }
                Op::SliceCols(x, start) => {
                    let xv = val(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(*x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        send(p, g.slice_rows(offset, rows));
                        offset += rows;
                    }
                }
                Op::NodeMix { adj, z, n_in, n_out } => {
                    let (a, zv) = (val(*adj), val(*z));
                    let c = zv.cols();
                    let batch = zv.rows() / n_in;
                    if nodes[adj.0].needs_grad {
                        let mut ga = Matrix::zeros(*n_out, *n_in);
                        for b in 0..batch {
                            gemm_raw(
                                1.0,
                                &g.data()[b * n_out * c..(b + 1) * n_out * c],
                                c,
                                false,
                                &zv.data()[b * n_in * c..(b + 1) * n_in * c],
                                c,
                                true,
                                1.0,
                                ga.data_mut(),
                                *n_in,
                                *n_out,
                                c,
                                *n_in,
                            );
                        }
                        send(*adj, ga);
                    }
                    if nodes[z.0].needs_grad {
                        let mut gz = Matrix::zeros(zv.rows(), c);
                        for b in 0..batch {
                            gemm_raw(
                                1.0,
                                a.data(),
                                *n_in,
                                true,
                                &g.data()[b * n_out * c..(b + 1) * n_out * c],
                                c,
                                false,
                                0.0,
                                &mut gz.data_mut()[b * n_in * c..(b + 1) * n_in * c],
                                c,
                                *n_in,
                                *n_out,
                                c,
                            );
                        }
                        send(*z, gz);
                    }
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Matrix> = inputs.iter().map(|&v| val(v)).collect();
                    let out = node.value.get();
                    for (v, gi) in inputs.iter().zip(op.backward(&ins, out, &g)) {
                        if let Some(gi) = gi {
                            send(*v, gi);
                        }
                    }
                }
            }
        }
        Ok(Gradients { params, leaves, running: self.running })
    }
}

#[inline]
pub(crate) fn interval_violation(d: f64, lo: f64, hi: f64) -> f64 {
    (lo - d).max(0.0) + (d - hi).max(0.0)
}
