use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, TokenSequence, EOS};
use crate::numerics::Mat64;

/// Token strings rendered as noisy one-hot frames, `upsample` frames per
/// token. Token `u` occupies input frames `(u-1) r + 1 ..= u r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub seed: u64,
    /// Vocabulary size including the end token; inputs have this many features.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub upsample: usize,
    /// Half-width of the uniform noise added to every feature.
    pub noise: f64,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(Error::Config("synthetic task needs at least two content tokens".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "token lengths {}..={} are not a non-empty range starting at 1 or more",
                self.min_len, self.max_len
            )));
        }
        if self.upsample == 0 {
            return Err(Error::Config("upsample must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Zero-based input frame range aligned with one-based token `u`.
    pub fn alignment(&self, u: usize) -> std::ops::Range<usize> {
        (u - 1) * self.upsample..u * self.upsample
    }
}

/// Utterance `id` of the task: content tokens without immediate repeats
/// (so token boundaries stay visible), then its frames.
pub fn gen_task(task: &SyntheticTask, id: usize) -> Result<Example> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    rng.set_stream(id as u64);
    let len = rng.gen_range(task.min_len..=task.max_len);
    let mut content = Vec::with_capacity(len);
    while content.len() < len {
        let y = rng.gen_range(1..task.vocab);
        if content.last() != Some(&y) {
            content.push(y);
        }
    }
    let frames = len * task.upsample;
    let mut x = Mat64::zeros(frames, task.vocab);
    for (u, &y) in content.iter().enumerate() {
        for f in u * task.upsample..(u + 1) * task.upsample {
            for j in 0..task.vocab {
                let clean = if j == y { 1.0 } else { 0.0 };
                let n = if task.noise > 0.0 {
                    rng.gen_range(-task.noise..=task.noise)
                } else {
                    0.0
                };
                x.set(f, j, clean + n);
            }
        }
    }
    debug_assert!(!content.contains(&EOS));
    Ok(Example {
        id,
        x,
        y: TokenSequence::target(&content, task.vocab)?,
    })
}

/// Utterances `first..first + count`.
pub fn dataset(task: &SyntheticTask, first: usize, count: usize) -> Result<Vec<Example>> {
    (first..first + count).map(|id| gen_task(task, id)).collect()
}
