//! Plain-text `key = value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::BackboneConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    /// Shapes per synthetic scene.
    pub n_shapes: usize,
    pub batch_size: usize,
    /// Train on one scene (the one for step 0) at every step.
    pub fixed_sample: bool,
    pub steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            n_shapes: 3,
            batch_size: 1,
            fixed_sample: false,
            steps: 100,
            seed: 0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("cannot parse value {value:?} for key {key:?}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "levels",
        "base_channels",
        "image_size",
        "n_shapes",
        "batch_size",
        "fixed_sample",
        "steps",
        "seed",
        "lr",
        "beta1",
        "beta2",
        "adam_epsilon",
        "lambda_re",
        "lambda_prec",
        "lambda_style",
        "lambda_tv",
        "lambda_adv",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "levels" => self.backbone.levels = parse(key, value)?,
            "base_channels" => self.backbone.base_channels = parse(key, value)?,
            "image_size" => self.backbone.image_size = parse(key, value)?,
            "n_shapes" => self.n_shapes = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "fixed_sample" => self.fixed_sample = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam.epsilon = parse(key, value)?,
            "lambda_re" => self.weights.reconstruction = parse(key, value)?,
            "lambda_prec" => self.weights.perceptual = parse(key, value)?,
            "lambda_style" => self.weights.style = parse(key, value)?,
            "lambda_tv" => self.weights.tv = parse(key, value)?,
            "lambda_adv" => self.weights.adversarial = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            seen.push(key);
            cfg.set(key, value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.adam.validate()?;
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_shapes == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_shapes and batch_size must be >= 1".into()));
        }
        if self.backbone.image_size < 8 {
            return Err(Error::Config("image_size must be >= 8".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let values: [String; 17] = [
            self.backbone.levels.to_string(),
            self.backbone.base_channels.to_string(),
            self.backbone.image_size.to_string(),
            self.n_shapes.to_string(),
            self.batch_size.to_string(),
            self.fixed_sample.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.adam.lr.to_string(),
            self.adam.beta1.to_string(),
            self.adam.beta2.to_string(),
            self.adam.epsilon.to_string(),
            self.weights.reconstruction.to_string(),
            self.weights.perceptual.to_string(),
            self.weights.style.to_string(),
            self.weights.tv.to_string(),
            self.weights.adversarial.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
