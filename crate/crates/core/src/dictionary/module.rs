//! Trainable reconstruction modules. Phase II only needs something that maps a
//! batch of cylindrical vectors to their reconstructions, so the dictionary
//! module and the autoencoder baseline share the [`Reconstructor`] trait.

use std::path::Path;

use super::losses::stack;
use super::mlp::{Mlp, MlpSpec};
use super::{AtomCoefficients, PoseDictionary};
use crate::error::{Error, Result};
use crate::geometry::CylPoseVector;
use crate::numerics::{Checkpoint, CounterRng, Matrix, Mode, ParamId, ParamKind, ParamStore, Tape, Var};

pub const ATOMS_NAME: &str = "dict.atoms";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconstructorKind {
    Dictionary,
    Autoencoder,
}

impl ReconstructorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dictionary => "dict",
            Self::Autoencoder => "ae",
        }
    }
}

pub trait Reconstructor {
    fn kind(&self) -> ReconstructorKind;

    fn store(&self) -> &ParamStore;

    fn store_mut(&mut self) -> &mut ParamStore;

    /// Input width `4m`.
    fn dim(&self) -> usize;

    /// `h` is `B x 4m`; returns the `B x 4m` reconstruction, reading weights
    /// from `store` (the module's own store or a structurally identical copy).
    fn reconstruct_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        h: Var,
        mode: Mode,
        trainable: bool,
    ) -> Var;

    fn reconstruct<'a>(&'a self, tape: &mut Tape<'a>, h: Var, mode: Mode, trainable: bool) -> Var {
        self.reconstruct_in(self.store(), tape, h, mode, trainable)
    }

    /// Extra loss terms on the module parameters (`L_dict` for the dictionary).
    fn regularizer_in<'a>(&self, _store: &'a ParamStore, _tape: &mut Tape<'a>) -> Option<Var> {
        None
    }

    fn regularizer<'a>(&'a self, tape: &mut Tape<'a>) -> Option<Var> {
        self.regularizer_in(self.store(), tape)
    }

    fn checkpoint(&self) -> Checkpoint;

    fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }
}

fn widths_meta(w: &[usize]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_meta_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("missing or invalid meta `{key}`")))
}

fn parse_meta_widths(ck: &Checkpoint, key: &str) -> Result<Vec<usize>> {
    let raw = ck.meta(key).ok_or_else(|| Error::Checkpoint(format!("missing meta `{key}`")))?;
    raw.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Checkpoint(format!("bad widths in `{key}`"))))
        .collect()
}

fn is_buffer(name: &str) -> bool {
    name.ends_with(".bn_mean") || name.ends_with(".bn_var")
}

/// Encoder with a softmax head followed by `h̃ = D c`.
#[derive(Clone, Debug)]
pub struct DictionaryModule {
    store: ParamStore,
    encoder: Mlp,
    atoms: ParamId,
    hidden: Vec<usize>,
}

impl DictionaryModule {
    /// Random encoder, zero atoms. The atoms are usually set by
    /// [`init_dictionary`](super::init_dictionary) right after.
    pub fn new(dim: usize, k: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if k == 0 || dim == 0 || !dim.is_multiple_of(4) {
            return Err(Error::validation("k", "need k >= 1 and a positive multiple of 4 input width"));
        }
        let mut store = ParamStore::new();
        let mut rng = CounterRng::new(seed).fork_str("encoder");
        let encoder = Mlp::build(MlpSpec::with_shortcuts(dim, hidden, k), &mut store, "enc", &mut rng)?;
        let atoms = store.insert(ATOMS_NAME, Matrix::zeros(dim, k), ParamKind::Trainable)?;
        Ok(Self { store, encoder, atoms, hidden: hidden.to_vec() })
    }

    pub fn k(&self) -> usize {
        self.store.value(self.atoms).cols()
    }

    pub fn dictionary(&self) -> PoseDictionary {
        PoseDictionary::new(self.store.value(self.atoms).clone()).expect("atoms shape checked at construction")
    }

    pub fn set_atoms(&mut self, dict: &PoseDictionary) -> Result<()> {
        let cur = self.store.value_mut(self.atoms);
        if cur.shape() != dict.atoms().shape() {
            return Err(Error::shape(format!("{:?}", cur.shape()), format!("{:?}", dict.atoms().shape())));
        }
        *cur = dict.atoms().clone();
        Ok(())
    }

    pub fn atoms_id(&self) -> ParamId {
        self.atoms
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    /// Zeroes the encoder head so that every input maps to uniform weights.
    pub fn zero_encoder_head(&mut self) {
        self.encoder.zero_output_layer(&mut self.store);
    }

    /// `B x k` coefficients on the probability simplex.
    pub fn coefficients<'a>(&'a self, tape: &mut Tape<'a>, h: Var, mode: Mode, trainable: bool) -> Var {
        self.coefficients_in(&self.store, tape, h, mode, trainable)
    }

    fn coefficients_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        h: Var,
        mode: Mode,
        trainable: bool,
    ) -> Var {
        let logits = self.encoder.forward(tape, store, h, mode, trainable);
        tape.softmax_rows(logits)
    }

    /// Encodes a batch. Train mode uses batch statistics, so batches of one
    /// should use [`Mode::Infer`].
    pub fn encode(&self, h: &[CylPoseVector], mode: Mode) -> Result<Vec<AtomCoefficients>> {
        if h.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(bad) = h.iter().find(|v| v.len() != self.dim()) {
            return Err(Error::shape(format!("{} values", self.dim()), format!("{}", bad.len())));
        }
        let m = stack(h)?;
        let mut tape = Tape::new();
        let x = tape.input(m);
        let c = self.coefficients(&mut tape, x, mode, false);
        let c = tape.value(c);
        (0..c.rows()).map(|r| AtomCoefficients::new(c.row(r).to_vec())).collect()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model.kind") != Some(ReconstructorKind::Dictionary.as_str()) {
            return Err(Error::Checkpoint("not a dictionary checkpoint".into()));
        }
        let dim = parse_meta_usize(ck, "model.dim")?;
        let k = parse_meta_usize(ck, "model.k")?;
        let hidden = parse_meta_widths(ck, "model.hidden")?;
        let store = ck.to_store("", is_buffer)?;
        let encoder = Mlp::bind(MlpSpec::with_shortcuts(dim, &hidden, k), &store, "enc")?;
        let atoms = store.id(ATOMS_NAME).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{ATOMS_NAME}`")))?;
        if store.value(atoms).shape() != (dim, k) {
            return Err(Error::Checkpoint("dict.atoms has wrong shape".into()));
        }
        Ok(Self { store, encoder, atoms, hidden })
    }
}

impl Reconstructor for DictionaryModule {
    fn kind(&self) -> ReconstructorKind {
        ReconstructorKind::Dictionary
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn dim(&self) -> usize {
        self.store.value(self.atoms).rows()
    }

    fn reconstruct_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        h: Var,
        mode: Mode,
        trainable: bool,
    ) -> Var {
        let c = self.coefficients_in(store, tape, h, mode, trainable);
        let d = if trainable { tape.param(store, self.atoms) } else { tape.frozen(store, self.atoms) };
        tape.matmul_t(c, d)
    }

    fn regularizer_in<'a>(&self, store: &'a ParamStore, tape: &mut Tape<'a>) -> Option<Var> {
        let d = tape.param(store, self.atoms);
        Some(super::loss_dict_on_tape(tape, d))
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store);
        ck.meta.insert("model.kind".into(), self.kind().as_str().into());
        ck.meta.insert("model.dim".into(), self.dim().to_string());
        ck.meta.insert("model.k".into(), self.k().to_string());
        ck.meta.insert("model.hidden".into(), widths_meta(&self.hidden));
        ck
    }
}

/// Baseline reconstructor: the same encoder trunk without softmax, followed
/// by a mirrored decoder back to `4m`.
#[derive(Clone, Debug)]
pub struct AutoencoderModule {
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    dim: usize,
    bottleneck: usize,
    hidden: Vec<usize>,
}

fn mirrored(hidden: &[usize]) -> Vec<usize> {
    hidden.iter().rev().copied().collect()
}

impl AutoencoderModule {
    pub fn new(dim: usize, bottleneck: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if bottleneck == 0 || dim == 0 {
            return Err(Error::validation("k", "bottleneck and input width must be positive"));
        }
        let mut store = ParamStore::new();
        let mut rng = CounterRng::new(seed).fork_str("encoder");
        let encoder = Mlp::build(MlpSpec::with_shortcuts(dim, hidden, bottleneck), &mut store, "enc", &mut rng)?;
        let mut rng = CounterRng::new(seed).fork_str("decoder");
        let decoder =
            Mlp::build(MlpSpec::with_shortcuts(bottleneck, &mirrored(hidden), dim), &mut store, "dec", &mut rng)?;
        Ok(Self { store, encoder, decoder, dim, bottleneck, hidden: hidden.to_vec() })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model.kind") != Some(ReconstructorKind::Autoencoder.as_str()) {
            return Err(Error::Checkpoint("not an autoencoder checkpoint".into()));
        }
        let dim = parse_meta_usize(ck, "model.dim")?;
        let bottleneck = parse_meta_usize(ck, "model.k")?;
        let hidden = parse_meta_widths(ck, "model.hidden")?;
        let store = ck.to_store("", is_buffer)?;
        let encoder = Mlp::bind(MlpSpec::with_shortcuts(dim, &hidden, bottleneck), &store, "enc")?;
        let decoder = Mlp::bind(MlpSpec::with_shortcuts(bottleneck, &mirrored(&hidden), dim), &store, "dec")?;
        Ok(Self { store, encoder, decoder, dim, bottleneck, hidden })
    }
}

impl Reconstructor for AutoencoderModule {
    fn kind(&self) -> ReconstructorKind {
        ReconstructorKind::Autoencoder
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn reconstruct_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        h: Var,
        mode: Mode,
        trainable: bool,
    ) -> Var {
        let code = self.encoder.forward(tape, store, h, mode, trainable);
        self.decoder.forward(tape, store, code, mode, trainable)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store);
        ck.meta.insert("model.kind".into(), self.kind().as_str().into());
        ck.meta.insert("model.dim".into(), self.dim.to_string());
        ck.meta.insert("model.k".into(), self.bottleneck.to_string());
        ck.meta.insert("model.hidden".into(), widths_meta(&self.hidden));
        ck
    }
}

/// Loads either kind of module from a checkpoint.
pub fn load_reconstructor(ck: &Checkpoint) -> Result<Box<dyn Reconstructor>> {
    match ck.meta("model.kind") {
        Some("dict") => Ok(Box::new(DictionaryModule::from_checkpoint(ck)?)),
        Some("ae") => Ok(Box::new(AutoencoderModule::from_checkpoint(ck)?)),
        _ => Err(Error::MissingDictionary),
    }
}
