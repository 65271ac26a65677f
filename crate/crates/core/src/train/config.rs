//! Training configuration and its `key = value` file format.

use std::str::FromStr;

use crate::arch::HyperParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayStyle {
    /// L2 term added to the gradient before the moment updates.
    Coupled,
    /// Decay applied to the weights directly, outside the moments.
    Decoupled,
}

impl FromStr for DecayStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "coupled" | "l2" => Ok(DecayStyle::Coupled),
            "decoupled" => Ok(DecayStyle::Decoupled),
            _ => Err(format!("decay_style '{s}' is not 'coupled' or 'decoupled'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub step_size: u64,
    pub weight_decay: f64,
    pub decay_style: DecayStyle,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub max_iters: u64,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    pub conv_kernel: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            gamma: 0.1,
            step_size: 50_000,
            weight_decay: 5e-4,
            decay_style: DecayStyle::Coupled,
            beta1: 0.97,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 4,
            patch_size: 64,
            max_iters: 500,
            seed: 0,
            checkpoint_every: 100,
            conv_kernel: "gemm".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, hp: &HyperParams) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.step_size == 0 {
            return bad("step_size must be positive".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return bad("eps_adam must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let div = hp.size_divisor();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(div) {
            return bad(format!(
                "patch_size {} must be a positive multiple of {div}",
                self.patch_size
            ));
        }
        // batch statistics at the coarsest stage need two values per channel
        let coarsest = self.batch_size * (self.patch_size / div).pow(3);
        if coarsest < 2 {
            return bad(format!(
                "batch_size {} with patch_size {} leaves {coarsest} value per channel at the coarsest stage; batch norm needs 2",
                self.batch_size, self.patch_size
            ));
        }
        Ok(())
    }
}

/// Everything a config file can set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub hyper: HyperParams,
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Config {
        line,
        message: format!("{key}: {e}"),
    })
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, val)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            });
        };
        let (key, val) = (key.trim(), val.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
        let (t, h) = (&mut cfg.train, &mut cfg.hyper);
        match key {
            "lr" => t.lr = value(line, key, val)?,
            "gamma" => t.gamma = value(line, key, val)?,
            "step_size" => t.step_size = value(line, key, val)?,
            "weight_decay" => t.weight_decay = value(line, key, val)?,
            "decay_style" => t.decay_style = value(line, key, val)?,
            "beta1" => t.beta1 = value(line, key, val)?,
            "beta2" => t.beta2 = value(line, key, val)?,
            "eps_adam" => t.eps_adam = value(line, key, val)?,
            "batch_size" => t.batch_size = value(line, key, val)?,
            "patch_size" => t.patch_size = value(line, key, val)?,
            "max_iters" => t.max_iters = value(line, key, val)?,
            "seed" => t.seed = value(line, key, val)?,
            "checkpoint_every" => t.checkpoint_every = value(line, key, val)?,
            "conv_kernel" => t.conv_kernel = val.to_string(),
            "growth_rate" => h.growth_rate = value(line, key, val)?,
            "stem_channels" => h.stem_channels = value(line, key, val)?,
            "compression" => h.compression = value(line, key, val)?,
            "num_blocks" => h.num_blocks = value(line, key, val)?,
            "layers_per_block" => h.layers_per_block = value(line, key, val)?,
            "dropout_rate" => h.dropout_rate = value(line, key, val)?,
            "num_classes" => h.num_classes = value(line, key, val)?,
            "num_modalities" => h.num_modalities = value(line, key, val)?,
            "upsample_path_channels" => h.upsample_path_channels = value(line, key, val)?,
            "upsample_mode" => h.upsample_mode = val.to_string(),
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{key}'"),
                })
            }
        }
    }
    cfg.hyper.validate()?;
    cfg.train.validate(&cfg.hyper)?;
    crate::nn::conv_kernels::<f32>().get(&cfg.train.conv_kernel)?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
