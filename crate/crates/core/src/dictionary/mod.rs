//! Pose dictionary learning: an encoder maps a cylindrical hand vector onto
//! the probability simplex over `k` atoms, and the reconstruction is the
//! matching convex combination of atoms.

mod losses;
mod mlp;
mod module;
mod train;

pub use losses::{
    interval_loss, loss_dict, loss_dict_on_tape, loss_rec, rec_loss_in, rec_loss_on_tape, reconstruct,
    reconstruction_errors,
};
pub use mlp::{Mlp, MlpSpec};
pub use module::{
    load_reconstructor, AutoencoderModule, DictionaryModule, Reconstructor, ReconstructorKind, ATOMS_NAME,
};
pub use train::{
    encode_training_poses, init_dictionary, train_phase1, train_reconstructor, Phase1Epoch, Phase1History,
    MAX_SKIPPED_FRACTION,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Atom matrix, `4m x k`; column `j` is atom `j` in `(rho, cos, sin, z)` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDictionary {
    atoms: Matrix,
}

impl PoseDictionary {
    pub fn new(atoms: Matrix) -> Result<Self> {
        if atoms.rows() == 0 || !atoms.rows().is_multiple_of(4) || atoms.cols() == 0 {
            return Err(Error::shape("4m x k with m, k >= 1", format!("{:?}", atoms.shape())));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn k(&self) -> usize {
        self.atoms.cols()
    }

    pub fn dim(&self) -> usize {
        self.atoms.rows()
    }
}

/// Convex weights over atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomCoefficients {
    c: Vec<f64>,
}

impl AtomCoefficients {
    /// Accepts weights that are non-negative and sum to 1 within `1e-6`.
    pub fn new(c: Vec<f64>) -> Result<Self> {
        let sum: f64 = c.iter().sum();
        if c.is_empty() || c.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation("coefficients", "must lie on the probability simplex"));
        }
        Ok(Self { c })
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }
}

#[cfg(test)]
mod tests;
