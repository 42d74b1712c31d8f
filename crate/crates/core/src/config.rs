//! Run configuration: one JSON document that fully determines a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::AttentionKind;
use crate::metrics::{dataset, SyntheticTask};
use crate::model::{AdamConfig, DecodeOptions, Example, ModelDims};

/// First utterance id of the held-out split.
pub const DEV_FIRST_ID: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds parameter initialization and batch order.
    pub seed: u64,
    pub task: SyntheticTask,
    pub train_size: usize,
    pub dev_size: usize,
    pub model: ModelDims,
    pub attention: AttentionKind,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Dev loss is evaluated every this many optimizer steps and at the end of each epoch.
    #[serde(default)]
    pub eval_every: Option<u64>,
    pub decode: DecodeOptions,
    #[serde(default)]
    pub nu: Vec<f64>,
    /// Seconds per input frame, for latencies in seconds.
    #[serde(default = "default_frame_period")]
    pub frame_period: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_frame_period() -> f64 {
    0.01
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        self.decode.validate()?;
        if self.model.vocab != self.task.vocab || self.model.d_x != self.task.vocab {
            return Err(Error::Config(format!(
                "model vocab {} and d_x {} must both equal the task vocabulary {}",
                self.model.vocab, self.model.d_x, self.task.vocab
            )));
        }
        if let AttentionKind::Windowed { w: 0 } | AttentionKind::Mocha { w: 0 } = self.attention {
            return Err(Error::Config("window length w must be at least 1".into()));
        }
        if self.train_size == 0 || self.dev_size == 0 {
            return Err(Error::Config("train_size and dev_size must be positive".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if let Some(nu) = self.nu.iter().find(|nu| !(0.0..=1.0).contains(*nu)) {
            return Err(Error::Config(format!("threshold {nu} outside [0, 1]")));
        }
        if !(self.frame_period > 0.0 && self.frame_period.is_finite()) {
            return Err(Error::Config("frame_period must be positive".into()));
        }
        Ok(())
    }

    pub fn train_set(&self) -> Result<Vec<Example>> {
        dataset(&self.task, 0, self.train_size)
    }

    pub fn dev_set(&self) -> Result<Vec<Example>> {
        dataset(&self.task, DEV_FIRST_ID, self.dev_size)
    }

    /// Desk-scale DecGRC setup: 16 tokens, up to 12 per utterance, 4 frames each.
    pub fn toy_decgrc() -> Self {
        Self {
            seed: 5,
            task: SyntheticTask {
                seed: 11,
                vocab: 16,
                min_len: 3,
                max_len: 12,
                upsample: 4,
                noise: 0.2,
            },
            train_size: 2000,
            dev_size: 100,
            model: ModelDims {
                d_x: 16,
                d_h: 32,
                d_s: 32,
                d_a: 32,
                d_emb: 16,
                vocab: 16,
                lookahead: 2,
                stride: 4,
            },
            attention: AttentionKind::DecGrc,
            optimizer: AdamConfig {
                clip_norm: Some(5.0),
                ..AdamConfig::new(3e-3, 16)
            },
            epochs: 60,
            eval_every: None,
            decode: DecodeOptions::greedy(16),
            nu: vec![0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.9],
            frame_period: 0.01,
            out: None,
        }
    }
}
