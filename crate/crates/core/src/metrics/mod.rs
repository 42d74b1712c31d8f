//! Token error rate, average lagging and the threshold sweep, plus the
//! synthetic task they are measured on.

mod sweep;
mod task;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sweep::{sweep_threshold, Sweep, SweepRow, UtteranceDetail};
pub use task::{dataset, gen_task, SyntheticTask};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the reference length. Can exceed 1.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Contract("error rate against an empty reference".into()));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Input frames consumed before each output: `min(T_in, stride * t_end + L)`,
/// made non-decreasing by a running maximum.
pub fn lag_schedule(endpoints: &[usize], frames_in: usize, stride: usize, lookahead: usize) -> Vec<usize> {
    let mut high = 0;
    endpoints
        .iter()
        .map(|&t| {
            high = high.max(frames_in.min(stride * t + lookahead));
            high
        })
        .collect()
}

/// Latency of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagRecord {
    pub g: Vec<usize>,
    pub x_len: usize,
    pub y_len: usize,
    /// First one-based step that has read the whole input, or `|y|` if none did.
    pub tau_g: usize,
    pub reached_end: bool,
    pub al_frames: f64,
    pub al_seconds: f64,
}

impl LagRecord {
    pub fn new(g: Vec<usize>, x_len: usize, frame_period: f64) -> Result<Self> {
        if g.is_empty() || x_len == 0 {
            return Err(Error::Contract("average lagging needs a non-empty schedule and input".into()));
        }
        if g.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Contract("lag schedule must be non-decreasing".into()));
        }
        let y_len = g.len();
        let hit = g.iter().position(|&v| v >= x_len);
        let tau_g = hit.map_or(y_len, |i| i + 1);
        let rate = x_len as f64 / y_len as f64;
        let sum: f64 = g[..tau_g]
            .iter()
            .enumerate()
            .map(|(i, &v)| v as f64 - i as f64 * rate)
            .sum();
        let al_frames = sum / tau_g as f64;
        Ok(Self {
            g,
            x_len,
            y_len,
            tau_g,
            reached_end: hit.is_some(),
            al_frames,
            al_seconds: al_frames * frame_period,
        })
    }
}

/// Average lagging in frames of a non-decreasing schedule `g` over an input of `x_len` frames.
pub fn average_lagging(g: &[usize], x_len: usize) -> Result<f64> {
    Ok(LagRecord::new(g.to_vec(), x_len, 1.0)?.al_frames)
}
