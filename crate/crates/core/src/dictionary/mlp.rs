//! Fully connected network with batch normalization and additive shortcuts.

use crate::config::{BN_EPS, ENCODER_SHORTCUTS};
use crate::error::{Error, Result};
use crate::numerics::{CounterRng, Matrix, Mode, ParamId, ParamKind, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input: usize,
    /// Output width of every layer; the last entry is the network output.
    pub widths: Vec<usize>,
    /// 1-based `(from, to)`: the activation of layer `from` is added to the
    /// normalized pre-activation of layer `to`.
    pub shortcuts: Vec<(usize, usize)>,
}

impl MlpSpec {
    /// Hidden widths followed by `output`, with the standard shortcut pairs
    /// kept wherever both ends exist and widths agree.
    pub fn with_shortcuts(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(output);
        let shortcuts = ENCODER_SHORTCUTS
            .iter()
            .copied()
            .filter(|&(a, b)| b < widths.len() && widths[a - 1] == widths[b - 1])
            .collect();
        Self { input, widths, shortcuts }
    }
}

#[derive(Clone, Debug)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    bn: Option<Bn>,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

fn layer_name(prefix: &str, l: usize, field: &str) -> String {
    format!("{prefix}.layer{l}.{field}")
}

impl Mlp {
    /// Adds freshly initialized parameters under `prefix` to `store`.
    pub fn build(spec: MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut CounterRng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = spec.input;
        let n = spec.widths.len();
        for (i, &width) in spec.widths.iter().enumerate() {
            let l = i + 1;
            let last = l == n;
            // He initialization for ReLU layers, Glorot for the linear head.
            let std = if last { (2.0 / (fan_in + width) as f64).sqrt() } else { (2.0 / fan_in as f64).sqrt() };
            let w = Matrix::from_fn(fan_in, width, |_, _| rng.normal() * std);
            let w = store.insert(layer_name(prefix, l, "W"), w, ParamKind::Trainable)?;
            let b = store.insert(layer_name(prefix, l, "b"), Matrix::zeros(1, width), ParamKind::Trainable)?;
            let bn = if last {
                None
            } else {
                Some(Bn {
                    gamma: store.insert(
                        layer_name(prefix, l, "bn_gamma"),
                        Matrix::filled(1, width, 1.0),
                        ParamKind::Trainable,
                    )?,
                    beta: store.insert(
                        layer_name(prefix, l, "bn_beta"),
                        Matrix::zeros(1, width),
                        ParamKind::Trainable,
                    )?,
                    mean: store.insert(layer_name(prefix, l, "bn_mean"), Matrix::zeros(1, width), ParamKind::Buffer)?,
                    var: store.insert(
                        layer_name(prefix, l, "bn_var"),
                        Matrix::filled(1, width, 1.0),
                        ParamKind::Buffer,
                    )?,
                })
            };
            layers.push(Layer { w, b, bn });
            fan_in = width;
        }
        Ok(Self { spec, layers })
    }

    /// Finds existing parameters under `prefix` (e.g. after loading a checkpoint).
    pub fn bind(spec: MlpSpec, store: &ParamStore, prefix: &str) -> Result<Self> {
        let find = |l: usize, f: &str| {
            let name = layer_name(prefix, l, f);
            store.id(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let n = spec.widths.len();
        let mut layers = Vec::new();
        let mut fan_in = spec.input;
        for (i, &width) in spec.widths.iter().enumerate() {
            let l = i + 1;
            let w = find(l, "W")?;
            if store.value(w).shape() != (fan_in, width) {
                return Err(Error::Checkpoint(format!("{prefix}.layer{l}.W has wrong shape")));
            }
            let bn = if l == n {
                None
            } else {
                Some(Bn {
                    gamma: find(l, "bn_gamma")?,
                    beta: find(l, "bn_beta")?,
                    mean: find(l, "bn_mean")?,
                    var: find(l, "bn_var")?,
                })
            };
            layers.push(Layer { w, b: find(l, "b")?, bn });
            fan_in = width;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn output_width(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    /// Forward pass. With `trainable == false` weights enter as constants.
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var, mode: Mode, trainable: bool) -> Var {
        let read =
            |tape: &mut Tape<'a>, id: ParamId| if trainable { tape.param(store, id) } else { tape.frozen(store, id) };
        let mut acts: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let l = i + 1;
            let w = read(tape, layer.w);
            let b = read(tape, layer.b);
            let z = tape.matmul(h, w);
            let mut z = tape.add_row(z, b);
            if let Some(bn) = &layer.bn {
                let gamma = read(tape, bn.gamma);
                let beta = read(tape, bn.beta);
                z = match mode {
                    Mode::Train => {
                        let (out, mean, var) = tape.batch_norm_train(z, gamma, beta, BN_EPS);
                        tape.record_running(store, bn.mean, mean);
                        tape.record_running(store, bn.var, var);
                        out
                    }
                    Mode::Infer => {
                        tape.batch_norm_infer(z, gamma, beta, store.value(bn.mean), store.value(bn.var), BN_EPS)
                    }
                };
                for &(from, to) in &self.spec.shortcuts {
                    if to == l {
                        z = tape.add(z, acts[from - 1]);
                    }
                }
                z = tape.relu(z);
            }
            acts.push(z);
            h = z;
        }
        h
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let last = self.layers.last().unwrap();
        store.value_mut(last.w).fill(0.0);
        store.value_mut(last.b).fill(0.0);
    }
}
