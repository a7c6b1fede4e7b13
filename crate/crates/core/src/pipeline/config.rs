use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{KMethod, DEFAULT_K_CAP, DEFAULT_PIN_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::ProfileNorm;
use crate::losses::DEFAULT_TARGET_TEMPERATURE;
use crate::mining::{DEFAULT_EPS, DEFAULT_MIN_PTS, DEFAULT_NEGATIVES};

/// Training and inference settings. The text form is one `key = value` per
/// line with `#` comments; keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub warmup_iters: usize,
    /// Epochs of the alternating schedule.
    pub main_iters: usize,
    /// Epochs without stage-B improvement before stopping; 0 disables.
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Quadruplets per stage-B step.
    pub quad_batch: usize,
    pub negatives: usize,
    pub source_temperature: f64,
    pub target_temperature: f64,
    /// Input jitter for the augmented copies, relative to the feature std.
    pub jitter_sigma: f64,
    pub eps_dbscan: f64,
    pub min_pts: usize,
    pub pin_threshold: f64,
    pub lambda: f64,
    pub profile_norm: ProfileNorm,
    /// Alternate the two stages per minibatch instead of per epoch.
    pub interleave: bool,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub disc_dim: usize,
    pub decoder_hidden: usize,
    pub k_method: KMethod,
    /// 0 means the number of known classes.
    pub k_min: usize,
    pub k_max: usize,
    /// Skip estimation and cluster with this K; 0 means estimate.
    pub k_override: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 30,
            main_iters: 50,
            patience: 10,
            lr: 0.01,
            batch_size: 64,
            quad_batch: 16,
            negatives: DEFAULT_NEGATIVES,
            source_temperature: 1.0,
            target_temperature: DEFAULT_TARGET_TEMPERATURE,
            jitter_sigma: 0.01,
            eps_dbscan: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            pin_threshold: DEFAULT_PIN_THRESHOLD,
            lambda: 1.0,
            profile_norm: ProfileNorm::Softmax,
            interleave: false,
            hidden_dim: 64,
            embed_dim: 32,
            disc_dim: 32,
            decoder_hidden: 64,
            k_method: KMethod::Brent,
            k_min: 0,
            k_max: DEFAULT_K_CAP,
            k_override: 0,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}` cannot be `{value}`")))
}

fn norm_name(n: ProfileNorm) -> &'static str {
    match n {
        ProfileNorm::Softmax => "softmax",
        ProfileNorm::ShiftedSum => "shifted_sum",
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "warmup_iters" => self.warmup_iters = parse(key, value)?,
            "main_iters" => self.main_iters = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "quad_batch" => self.quad_batch = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "source_temperature" => self.source_temperature = parse(key, value)?,
            "target_temperature" => self.target_temperature = parse(key, value)?,
            "jitter_sigma" => self.jitter_sigma = parse(key, value)?,
            "eps_dbscan" => self.eps_dbscan = parse(key, value)?,
            "min_pts" => self.min_pts = parse(key, value)?,
            "pin_threshold" => self.pin_threshold = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "profile_norm" => {
                self.profile_norm = match value {
                    "softmax" => ProfileNorm::Softmax,
                    "shifted_sum" => ProfileNorm::ShiftedSum,
                    _ => return Err(Error::InvalidConfig(format!("`{key}` cannot be `{value}`"))),
                }
            }
            "interleave" => self.interleave = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "disc_dim" => self.disc_dim = parse(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse(key, value)?,
            "k_method" => self.k_method = value.parse()?,
            "k_min" => self.k_min = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "k_override" => self.k_override = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Key/value pairs in key order, using the text representation.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("warmup_iters", self.warmup_iters.to_string()),
            ("main_iters", self.main_iters.to_string()),
            ("patience", self.patience.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("quad_batch", self.quad_batch.to_string()),
            ("negatives", self.negatives.to_string()),
            ("source_temperature", self.source_temperature.to_string()),
            ("target_temperature", self.target_temperature.to_string()),
            ("jitter_sigma", self.jitter_sigma.to_string()),
            ("eps_dbscan", self.eps_dbscan.to_string()),
            ("min_pts", self.min_pts.to_string()),
            ("pin_threshold", self.pin_threshold.to_string()),
            ("lambda", self.lambda.to_string()),
            ("profile_norm", norm_name(self.profile_norm).to_string()),
            ("interleave", self.interleave.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("disc_dim", self.disc_dim.to_string()),
            ("decoder_hidden", self.decoder_hidden.to_string()),
            ("k_method", self.k_method.to_string()),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("k_override", self.k_override.to_string()),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("quad_batch", self.quad_batch),
            ("negatives", self.negatives),
            ("min_pts", self.min_pts),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("disc_dim", self.disc_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("k_max", self.k_max),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("`{name}` must be positive")));
            }
        }
        let positive_reals = [
            ("lr", self.lr),
            ("source_temperature", self.source_temperature),
            ("target_temperature", self.target_temperature),
            ("eps_dbscan", self.eps_dbscan),
        ];
        for (name, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("`{name}` must be positive")));
            }
        }
        for (name, v) in [("jitter_sigma", self.jitter_sigma), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "`{name}` must be non-negative"
                )));
            }
        }
        if !self.pin_threshold.is_finite() {
            return Err(Error::InvalidConfig(
                "`pin_threshold` must be finite".into(),
            ));
        }
        if self.k_min > self.k_max {
            return Err(Error::EmptyRange(self.k_min, self.k_max));
        }
        Ok(())
    }
}
