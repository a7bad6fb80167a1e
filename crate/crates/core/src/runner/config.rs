//! Experiment configuration: defaults, `key=value` and JSON file parsing,
//! and command-line overrides sharing one setter.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Random,
    Bigram,
    Srgnn,
    Noisy,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Random => "random",
            Variant::Bigram => "bigram",
            Variant::Srgnn => "srgnn",
            Variant::Noisy => "noisy",
        }
    }

    pub fn is_trained(&self) -> bool {
        matches!(self, Variant::Srgnn | Variant::Noisy)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Variant::Random),
            "bigram" => Ok(Variant::Bigram),
            "srgnn" => Ok(Variant::Srgnn),
            "noisy" => Ok(Variant::Noisy),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected random|bigram|srgnn|noisy)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// JSON cannot carry ∞, so κ serializes as the string "inf" when infinite.
mod flex_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Complete, re-runnable description of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub variant: Variant,
    pub d: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub k: usize,
    pub spherical: bool,
    /// vMF densification concentration; ∞ disables densification.
    #[serde(with = "flex_f64")]
    pub kappa: f64,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p_count: usize,
    pub pair_budget: usize,
    pub seed: u64,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            variant: Variant::Srgnn,
            d: 100,
            epochs: 15,
            batch_size: 32,
            lr: 0.001,
            lr_decay: 0.1,
            k: 20,
            spherical: false,
            kappa: 250.0,
            lambda: 0.5,
            tau: 2.0,
            alpha: 0.1,
            beta: 0.0,
            p_count: 10,
            pair_budget: 4096,
            seed: 0,
            out_dir: "runs".into(),
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl ExperimentConfig {
    /// Apply one `key=value` override; shared by file parsing and CLI flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.trim().to_string(),
            "variant" => self.variant = value.trim().parse()?,
            "d" => self.d = parse_as(key, value)?,
            "epochs" => self.epochs = parse_as(key, value)?,
            "batch_size" => self.batch_size = parse_as(key, value)?,
            "lr" => self.lr = parse_as(key, value)?,
            "lr_decay" => self.lr_decay = parse_as(key, value)?,
            "k" => self.k = parse_as(key, value)?,
            "spherical" => self.spherical = parse_as(key, value)?,
            "kappa" => self.kappa = parse_as(key, value)?,
            "lambda" => self.lambda = parse_as(key, value)?,
            "tau" => self.tau = parse_as(key, value)?,
            "alpha" => self.alpha = parse_as(key, value)?,
            "beta" => self.beta = parse_as(key, value)?,
            "p_count" => self.p_count = parse_as(key, value)?,
            "pair_budget" => self.pair_budget = parse_as(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "out_dir" => self.out_dir = value.trim().to_string(),
            other => {
                return Err(Error::Config(format!("unknown configuration key `{other}`")))
            }
        }
        Ok(())
    }

    /// Load a config file: JSON when it starts with `{`, otherwise
    /// line-oriented `key=value` with `#` comments.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        }
        let mut cfg = ExperimentConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: no + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset path must be set".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!(
                "lr_decay must be positive, got {}",
                self.lr_decay
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        if self.d < 2 {
            return Err(Error::Config(format!("d must be ≥ 2, got {}", self.d)));
        }
        if self.kappa.is_nan() || self.kappa < 0.0 {
            return Err(Error::Config(format!("kappa must be ≥ 0, got {}", self.kappa)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite, got {}", self.beta)));
        }
        if self.pair_budget == 0 {
            return Err(Error::Config("pair_budget must be ≥ 1".into()));
        }
        if self.variant == Variant::Noisy && !self.spherical {
            return Err(Error::Config(
                "the noisy variant requires spherical embeddings (set spherical=true)".into(),
            ));
        }
        Ok(())
    }

    /// Short content hash naming the run directory.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
