//! Training configuration shared by both phases, the benchmark and the CLI.
//!
//! Config files are plain `key = value` lines; `#` starts a comment.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Hidden widths of the pose encoder before the final `k`-wide layer.
pub const ENCODER_WIDTHS: [usize; 7] = [1024, 256, 256, 1024, 256, 256, 1024];
/// 1-based layer pairs whose output is added into the later layer.
pub const ENCODER_SHORTCUTS: [(usize, usize); 2] = [(1, 4), (4, 7)];
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of pose atoms.
    pub k: usize,
    pub lambda_dict: f64,
    pub lambda_r: f64,
    /// Fraction of 5-frame subsequences that carry labels.
    pub ratio: f64,
    /// Phase I learning rate.
    pub lr: f64,
    /// Phase II learning rate.
    pub est_lr: f64,
    /// Learning-rate multiplier for the dictionary atoms, which live in
    /// millimeters while the encoder weights are of order one.
    pub atom_lr_scale: f64,
    pub batch_size: usize,
    /// Unlabeled mini-batch size in Phase II; 0 means "same as batch_size".
    pub unlabeled_batch_size: usize,
    pub dict_epochs: usize,
    pub est_epochs: usize,
    /// Phase II epochs over which the reconstruction weight ramps linearly
    /// up to `lambda_r`; 0 applies the full weight from the first step.
    pub rec_rampup_epochs: usize,
    pub seed: u64,
    /// Seeds for repeated benchmark runs.
    pub seeds: Vec<u64>,
    /// Back-propagate through the box frame inside the cylindrical transform.
    pub frame_grad: bool,
    pub encoder_widths: Vec<usize>,
    pub est_widths: (usize, usize),
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 30,
            lambda_dict: 100.0,
            lambda_r: 100.0,
            ratio: 0.05,
            lr: 1e-3,
            est_lr: 3e-3,
            atom_lr_scale: 100.0,
            batch_size: 64,
            unlabeled_batch_size: 0,
            dict_epochs: 200,
            est_epochs: 80,
            rec_rampup_epochs: 60,
            seed: 0,
            seeds: vec![0, 1, 2],
            frame_grad: true,
            encoder_widths: ENCODER_WIDTHS.to_vec(),
            est_widths: (64, 128),
            threads: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::validation(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

impl TrainConfig {
    pub fn unlabeled_batch(&self) -> usize {
        if self.unlabeled_batch_size == 0 {
            self.batch_size
        } else {
            self.unlabeled_batch_size
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("k", "must be at least 1"));
        }
        if !(self.lambda_dict >= 0.0) || !(self.lambda_r >= 0.0) {
            return Err(Error::validation("lambda", "weights must be non-negative"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::validation("ratio", "must lie in (0, 1]"));
        }
        if !(self.atom_lr_scale > 0.0) {
            return Err(Error::validation("atom_lr_scale", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::validation("lr", "must be positive"));
        }
        if !(self.est_lr > 0.0) {
            return Err(Error::validation("est_lr", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size", "batch normalization needs at least 2"));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::validation("encoder_widths", "widths must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "k" => self.k = parse(&key, value)?,
            "lambda_dict" => self.lambda_dict = parse(&key, value)?,
            "lambda_r" => self.lambda_r = parse(&key, value)?,
            "ratio" => self.ratio = parse(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "est_lr" => self.est_lr = parse(&key, value)?,
            "atom_lr_scale" => self.atom_lr_scale = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "unlabeled_batch_size" => self.unlabeled_batch_size = parse(&key, value)?,
            "dict_epochs" => self.dict_epochs = parse(&key, value)?,
            "est_epochs" => self.est_epochs = parse(&key, value)?,
            "rec_rampup_epochs" => self.rec_rampup_epochs = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "seeds" => self.seeds = parse_list(&key, value)?,
            "frame_grad" => self.frame_grad = parse(&key, value)?,
            "encoder_widths" => self.encoder_widths = parse_list(&key, value)?,
            "est_widths" => {
                let w: Vec<usize> = parse_list(&key, value)?;
                if w.len() != 2 {
                    return Err(Error::validation(key, "expected two widths"));
                }
                self.est_widths = (w[0], w[1]);
            }
            "threads" => self.threads = parse(&key, value)?,
            _ => return Err(Error::validation(key, "unknown config key")),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Ordered `(key, value)` pairs; feeding them back through [`TrainConfig::set`]
    /// reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("k", self.k.to_string()),
            ("lambda_dict", self.lambda_dict.to_string()),
            ("lambda_r", self.lambda_r.to_string()),
            ("ratio", self.ratio.to_string()),
            ("lr", self.lr.to_string()),
            ("est_lr", self.est_lr.to_string()),
            ("atom_lr_scale", self.atom_lr_scale.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("unlabeled_batch_size", self.unlabeled_batch_size.to_string()),
            ("dict_epochs", self.dict_epochs.to_string()),
            ("est_epochs", self.est_epochs.to_string()),
            ("rec_rampup_epochs", self.rec_rampup_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
            ("frame_grad", self.frame_grad.to_string()),
            ("encoder_widths", join(&self.encoder_widths)),
            ("est_widths", format!("{},{}", self.est_widths.0, self.est_widths.1)),
            ("threads", self.threads.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.k, 30);
        assert_eq!(c.lambda_dict, 100.0);
        assert_eq!(c.lambda_r, 100.0);
        assert_eq!(c.ratio, 0.05);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            k: 12,
            seeds: vec![4, 5],
            frame_grad: false,
            encoder_widths: vec![16, 8],
            ..TrainConfig::default()
        };
        let back = TrainConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse_text("k = 0").unwrap().validate().is_err());
        assert!(TrainConfig::parse_text("ratio = 1.5").unwrap().validate().is_err());
        assert!(TrainConfig::parse_text("nonsense = 1").is_err());
        assert!(matches!(TrainConfig::parse_text("k 3"), Err(Error::Parse { line: 1, .. })));
    }
}
