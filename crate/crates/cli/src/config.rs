//! Flat key=value run configuration with CLI overrides.
//!
//! The file format is UTF-8 `key = value` lines with `#` comments. Every
//! key is validated; unknown keys are errors so typos cannot silently fall
//! back to defaults.

use olinear::data::CsvSchema;
use olinear::error::{Error, Result};
use olinear::model::{NormLinNorm, NormLinTransform, OLinearConfig, Variant};
use olinear::train::{LossKind, TrainConfig};
use olinear::transform::BasisMethod;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub embed_size: usize,
    pub model_dim: usize,
    pub n_blocks: usize,
    pub normlin_transform: NormLinTransform,
    pub normlin_norm: NormLinNorm,
    pub csl_pre_linear: bool,
    pub csl_post_linear: bool,
    pub variant: Variant,
    pub basis_method: BasisMethod,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub horizon_weight_exponent: f64,
    pub grad_clip: f64,
    pub stride: usize,
    pub seed: u64,
    pub q_source_fraction: f64,
    pub output_dir: PathBuf,
    /// Optional; checked against the dataset header when present.
    pub n_variates: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            train_ratio: 0.7,
            val_ratio: 0.1,
            lookback: 96,
            horizon: 24,
            embed_size: 16,
            model_dim: 128,
            n_blocks: 1,
            normlin_transform: NormLinTransform::Softplus,
            normlin_norm: NormLinNorm::L1,
            csl_pre_linear: true,
            csl_post_linear: true,
            variant: Variant::OLinear,
            basis_method: BasisMethod::Eigen,
            learning_rate: 2e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            loss: LossKind::WeightedL1,
            horizon_weight_exponent: 0.5,
            grad_clip: 5.0,
            stride: 1,
            seed: 0,
            q_source_fraction: 1.0,
            output_dir: PathBuf::from("out"),
            n_variates: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!(
            "invalid boolean '{other}' for key '{key}'"
        ))),
    }
}

impl RunConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "train_ratio" => self.train_ratio = parse_value(key, value)?,
            "val_ratio" => self.val_ratio = parse_value(key, value)?,
            "lookback" => self.lookback = parse_value(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "embed_size" => self.embed_size = parse_value(key, value)?,
            "model_dim" => self.model_dim = parse_value(key, value)?,
            "n_blocks" => self.n_blocks = parse_value(key, value)?,
            "normlin_transform" => self.normlin_transform = value.parse()?,
            "normlin_norm" => self.normlin_norm = value.parse()?,
            "csl_pre_linear" => self.csl_pre_linear = parse_bool(key, value)?,
            "csl_post_linear" => self.csl_post_linear = parse_bool(key, value)?,
            "variant" => self.variant = value.parse()?,
            "basis_method" => self.basis_method = value.parse()?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "loss" => self.loss = value.parse()?,
            "horizon_weight_exponent" => self.horizon_weight_exponent = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "stride" => self.stride = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "q_source_fraction" => self.q_source_fraction = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "n_variates" => self.n_variates = Some(parse_value(key, value)?),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a config file, then apply `--set key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set '{item}' is not of the form key=value"))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("missing required key 'dataset'".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!(
                "train_ratio {} not in (0, 1)",
                self.train_ratio
            )));
        }
        if !(self.val_ratio > 0.0 && self.train_ratio + self.val_ratio < 1.0) {
            return Err(Error::Config(format!(
                "val_ratio {} leaves no test data after train_ratio {}",
                self.val_ratio, self.train_ratio
            )));
        }
        if !(self.q_source_fraction > 0.0 && self.q_source_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "q_source_fraction {} not in (0, 1]",
                self.q_source_fraction
            )));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be >= 0 (0 disables)".into()));
        }
        self.model_config(self.n_variates.unwrap_or(1))?
            .validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self, n_variates: usize) -> Result<OLinearConfig> {
        if let Some(expected) = self.n_variates {
            if expected != n_variates {
                return Err(Error::Config(format!(
                    "config says n_variates = {expected} but the dataset has {n_variates}"
                )));
            }
        }
        Ok(OLinearConfig {
            n_variates,
            lookback: self.lookback,
            horizon: self.horizon,
            embed_size: self.embed_size,
            model_dim: self.model_dim,
            n_blocks: self.n_blocks,
            normlin_transform: self.normlin_transform,
            normlin_norm: self.normlin_norm,
            csl_pre_linear: self.csl_pre_linear,
            csl_post_linear: self.csl_post_linear,
            variant: self.variant,
            basis_method: self.basis_method,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            loss: self.loss,
            horizon_weight_exponent: self.horizon_weight_exponent,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            stride: self.stride,
            seed: self.seed,
        }
    }

    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            min_train_steps: self.lookback + self.horizon,
        }
    }

    /// Full key=value echo, embedded into checkpoints.
    pub fn echo(&self, n_variates: usize) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("dataset", self.dataset.display().to_string());
        put("train_ratio", self.train_ratio.to_string());
        put("val_ratio", self.val_ratio.to_string());
        put("lookback", self.lookback.to_string());
        put("horizon", self.horizon.to_string());
        put("embed_size", self.embed_size.to_string());
        put("model_dim", self.model_dim.to_string());
        put("n_blocks", self.n_blocks.to_string());
        put(
            "normlin_transform",
            self.normlin_transform.name().to_string(),
        );
        put("normlin_norm", self.normlin_norm.name().to_string());
        put("csl_pre_linear", self.csl_pre_linear.to_string());
        put("csl_post_linear", self.csl_post_linear.to_string());
        put("variant", self.variant.name().to_string());
        put("basis_method", self.basis_method.name().to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("patience", self.patience.to_string());
        put("loss", self.loss.name().to_string());
        put(
            "horizon_weight_exponent",
            self.horizon_weight_exponent.to_string(),
        );
        put("grad_clip", self.grad_clip.to_string());
        put("stride", self.stride.to_string());
        put("seed", self.seed.to_string());
        put("q_source_fraction", self.q_source_fraction.to_string());
        put("n_variates", n_variates.to_string());
        m
    }
}
