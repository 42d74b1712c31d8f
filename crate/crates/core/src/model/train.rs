use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Example, Model};

/// Environment variable capping the worker threads used for training and sweeps.
pub const THREADS_ENV: &str = "GRC_ATTN_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, batch_size: usize) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip_norm: None,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Worker pool sized from [`THREADS_ENV`], or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Adam over the flattened parameter vector. Per-example gradients are
/// computed in parallel and summed in batch order, so results do not depend
/// on the thread count.
#[derive(Debug)]
pub struct Trainer {
    cfg: AdamConfig,
    seed: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    epochs: u64,
    pool: rayon::ThreadPool,
}

/// Mean cross-entropy per token of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLoss {
    pub iteration: u64,
    pub epoch: u64,
    pub train_ce: f64,
}

impl Trainer {
    pub fn new(cfg: AdamConfig, model: &Model, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = model.params().len();
        Ok(Self {
            cfg,
            seed,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
            epochs: 0,
            pool: thread_pool()?,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Batches for the next epoch: a seeded shuffle cut into chunks, ids
    /// sorted within each chunk.
    fn batches(&self, data: &[Example]) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epochs.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        order
            .chunks(self.cfg.batch_size)
            .map(|c| {
                let mut b = c.to_vec();
                b.sort_by_key(|&i| data[i].id);
                b
            })
            .collect()
    }

    /// One optimizer step on the given examples; returns mean CE per token.
    pub fn step(&mut self, model: &mut Model, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let results: Vec<Result<(f64, Vec<f64>)>> = self
            .pool
            .install(|| batch.par_iter().map(|ex| model.loss_and_grad(ex)).collect());
        let tokens: usize = batch.iter().map(|ex| ex.y.len()).sum();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.m.len()];
        for r in results {
            let (l, g) = r?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / tokens as f64;
        for g in &mut grad {
            *g *= scale;
        }
        if let Some(clip) = self.cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let k = clip / norm;
                for g in &mut grad {
                    *g *= k;
                }
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training diverged at step {}", self.steps + 1)));
        }
        self.apply(model, &grad);
        Ok(loss)
    }

    fn apply(&mut self, model: &mut Model, grad: &[f64]) {
        self.steps += 1;
        let AdamConfig {
            lr, beta1, beta2, eps, ..
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let mut flat = model.params().flatten();
        for i in 0..flat.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            flat[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        model
            .params_mut()
            .assign(&flat)
            .expect("optimizer state matches the parameter count");
    }

    /// One pass over the data; returns the per-step losses.
    pub fn train_epoch(&mut self, model: &mut Model, data: &[Example]) -> Result<Vec<IterationLoss>> {
        self.train_epoch_with(model, data, |_, _| Ok(()))
    }

    /// Like [`Trainer::train_epoch`], calling `after_step` with the updated model after every step.
    pub fn train_epoch_with<F>(&mut self, model: &mut Model, data: &[Example], mut after_step: F) -> Result<Vec<IterationLoss>>
    where
        F: FnMut(&Model, &IterationLoss) -> Result<()>,
    {
        if data.is_empty() {
            return Err(Error::Contract("training on an empty dataset".into()));
        }
        let batches = self.batches(data);
        let epoch = self.epochs;
        let mut out = Vec::with_capacity(batches.len());
        for b in batches {
            let batch: Vec<&Example> = b.iter().map(|&i| &data[i]).collect();
            let train_ce = self.step(model, &batch)?;
            let rec = IterationLoss {
                iteration: self.steps,
                epoch,
                train_ce,
            };
            after_step(model, &rec)?;
            out.push(rec);
        }
        self.epochs += 1;
        Ok(out)
    }
}

/// Mean over the step losses of one epoch.
pub fn epoch_mean(losses: &[IterationLoss]) -> f64 {
    losses.iter().map(|l| l.train_ce).sum::<f64>() / losses.len().max(1) as f64
}
