//! Run configuration: every hyperparameter in one place, parsed from
//! line-oriented `key = value` text.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::fnv1a64_bytes;
use crate::synth::GenConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Dot,
    Linear,
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(KernelKind::Dot),
            "linear" => Ok(KernelKind::Linear),
            other => Err(Error::Config(format!("unknown kernel '{other}' (want dot|linear)"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Dot => "dot",
            KernelKind::Linear => "linear",
        })
    }
}

/// All hyperparameters of a run.
///
/// Toy defaults are scaled down from the reference setting (100 topics,
/// covisible 6, threshold 0.2) to fit CPU training budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Number of latent topics K.
    pub topics: usize,
    /// Covisible topics kept for augmentation and matching.
    pub covisible: usize,
    /// Coarse match confidence threshold.
    pub tau: f64,
    /// Monte-Carlo topic samples per feature during training.
    pub samples: usize,
    /// Unmatched pairs per positive in the negative loss.
    pub negatives: usize,
    /// Fine patch extent (odd).
    pub patch: usize,

    /// Backbone widths for the four encoder levels.
    pub widths: [usize; 4],
    /// Coarse feature width (output at 1/8 scale).
    pub coarse_dim: usize,
    /// Fine feature width (output at 1/2 scale).
    pub fine_dim: usize,
    /// Cross-attention layers used for topic inference.
    pub topic_layers: usize,
    pub heads_coarse: usize,
    pub heads_fine: usize,

    pub kernel_topic: KernelKind,
    pub kernel_coarse: KernelKind,
    pub kernel_fine: KernelKind,

    /// Dual-softmax temperature.
    pub ds_temperature: f64,
    /// Add sinusoidal positional encoding to coarse features.
    pub positional_encoding: bool,
    /// Keep only mutual row/column argmax matches.
    pub mutual_check: bool,
    /// Use the heatmap argmax instead of its expectation in refinement.
    pub hard_argmax_fine: bool,

    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// Cap on ground-truth matches refined per training pair.
    pub fine_cap: usize,

    pub image_size: usize,
    pub perspective: f64,
    pub jitter: f64,

    /// Evaluation match cap (highest-confidence first).
    pub topk: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            topics: 8,
            covisible: 3,
            tau: 0.2,
            samples: 4,
            negatives: 5,
            patch: 5,
            widths: [32, 48, 64, 96],
            coarse_dim: 64,
            fine_dim: 32,
            topic_layers: 2,
            heads_coarse: 4,
            heads_fine: 2,
            kernel_topic: KernelKind::Linear,
            kernel_coarse: KernelKind::Linear,
            kernel_fine: KernelKind::Dot,
            ds_temperature: 0.1,
            positional_encoding: true,
            mutual_check: true,
            hard_argmax_fine: false,
            seed: 7,
            learning_rate: 0.01,
            steps: 2000,
            batch_size: 2,
            checkpoint_every: 500,
            fine_cap: 96,
            image_size: 128,
            perspective: 0.12,
            jitter: 0.15,
            topk: 1000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.covisible < 1 || self.topics < self.covisible {
            return Err(Error::Config(format!(
                "need topics >= covisible >= 1, got {} / {}",
                self.topics, self.covisible
            )));
        }
        if self.topics < 2 {
            return Err(Error::Config("need at least 2 topics".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0,1), got {}", self.tau)));
        }
        if self.samples < 1 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if self.patch % 2 == 0 {
            return Err(Error::Config(format!("patch must be odd, got {}", self.patch)));
        }
        if self.negatives < 1 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if self.coarse_dim % self.heads_coarse != 0
            || self.coarse_dim % 4 != 0
            || self.fine_dim % self.heads_fine != 0
        {
            return Err(Error::Config("feature widths must divide head counts (and 4)".into()));
        }
        if self.fine_dim >= self.coarse_dim {
            return Err(Error::Config(format!(
                "fine width {} must be below coarse width {}",
                self.fine_dim, self.coarse_dim
            )));
        }
        if self.image_size % 8 != 0 || self.image_size < 64 {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 8 and >= 64, got {}",
                self.image_size
            )));
        }
        if self.learning_rate <= 0.0 || self.ds_temperature <= 0.0 {
            return Err(Error::Config("learning_rate and ds_temperature must be positive".into()));
        }
        if self.batch_size < 1 || self.topk < 1 {
            return Err(Error::Config("batch_size and topk must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig { size: self.image_size, perspective: self.perspective, jitter: self.jitter }
    }

    /// Canonical `key = value` text with keys sorted; also the hash input.
    pub fn to_text(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("coarse_dim".into(), self.coarse_dim.to_string()),
            ("covisible".into(), self.covisible.to_string()),
            ("ds_temperature".into(), format_float(self.ds_temperature)),
            ("fine_cap".into(), self.fine_cap.to_string()),
            ("fine_dim".into(), self.fine_dim.to_string()),
            ("hard_argmax_fine".into(), self.hard_argmax_fine.to_string()),
            ("heads_coarse".into(), self.heads_coarse.to_string()),
            ("heads_fine".into(), self.heads_fine.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("jitter".into(), format_float(self.jitter)),
            ("kernel_coarse".into(), self.kernel_coarse.to_string()),
            ("kernel_fine".into(), self.kernel_fine.to_string()),
            ("kernel_topic".into(), self.kernel_topic.to_string()),
            ("learning_rate".into(), format_float(self.learning_rate)),
            ("mutual_check".into(), self.mutual_check.to_string()),
            ("negatives".into(), self.negatives.to_string()),
            ("patch".into(), self.patch.to_string()),
            ("perspective".into(), format_float(self.perspective)),
            ("positional_encoding".into(), self.positional_encoding.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("tau".into(), format_float(self.tau)),
            ("topic_layers".into(), self.topic_layers.to_string()),
            ("topics".into(), self.topics.to_string()),
            ("topk".into(), self.topk.to_string()),
            (
                "widths".into(),
                format!("{},{},{},{}", self.widths[0], self.widths[1], self.widths[2], self.widths[3]),
            ),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a64_bytes(self.to_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected 'key = value'", ln + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", ln + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Set one field by config key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match key {
            "topics" => self.topics = num(key, value)?,
            "covisible" => self.covisible = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "widths" => {
                let parts: Vec<&str> = value.split(',').map(|s| s.trim()).collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!(
                        "widths wants 4 comma-separated values, got '{value}'"
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.widths[i] = num("widths", p)?;
                }
            }
            "coarse_dim" => self.coarse_dim = num(key, value)?,
            "fine_dim" => self.fine_dim = num(key, value)?,
            "topic_layers" => self.topic_layers = num(key, value)?,
            "heads_coarse" => self.heads_coarse = num(key, value)?,
            "heads_fine" => self.heads_fine = num(key, value)?,
            "kernel_topic" => self.kernel_topic = value.parse()?,
            "kernel_coarse" => self.kernel_coarse = value.parse()?,
            "kernel_fine" => self.kernel_fine = value.parse()?,
            "ds_temperature" => self.ds_temperature = num(key, value)?,
            "positional_encoding" => self.positional_encoding = num(key, value)?,
            "mutual_check" => self.mutual_check = num(key, value)?,
            "hard_argmax_fine" => self.hard_argmax_fine = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "fine_cap" => self.fine_cap = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "perspective" => self.perspective = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "topk" => self.topk = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn format_float(v: f64) -> String {
    // Stable text form for hashing: shortest representation that round-trips.
    format!("{v}")
}
