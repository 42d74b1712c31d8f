use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::Mat64;

/// Encoded frames `h_1..h_T`, one row per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence(Mat64);

impl EncodedSequence {
    pub fn new(h: Mat64) -> Result<Self> {
        if h.rows() == 0 {
            return Err(Error::Contract("encoded sequence needs at least one frame".into()));
        }
        Ok(Self(h))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Mat64::from_rows(rows)?)
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    /// Feature dimension `d_h`.
    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    /// Frame `t`, zero-based.
    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn matrix(&self) -> &Mat64 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat64 {
        self.0
    }
}

/// Scores `e_{u,1:T}` of one decoder step plus the trainable gate bias `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub e: Vec<f64>,
    pub bias: f64,
}

impl ScoreRow {
    pub fn new(e: Vec<f64>) -> Self {
        Self { e, bias: 0.0 }
    }

    pub fn with_bias(e: Vec<f64>, bias: f64) -> Self {
        Self { e, bias }
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// `e_t + b`, zero-based `t`.
    pub fn biased(&self, t: usize) -> f64 {
        self.e[t] + self.bias
    }
}

/// Update gates `z_{u,1:T}`: the first gate is exactly one, the rest lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSequence(Vec<f64>);

impl GateSequence {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        match z.first() {
            None => return Err(Error::Contract("empty gate sequence".into())),
            Some(&z1) if z1 != 1.0 => {
                return Err(Error::Contract(format!("first gate must be 1, got {z1}")))
            }
            _ => {}
        }
        if let Some((t, x)) = z.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Contract(format!("gate {} = {x} outside [0, 1]", t + 1)));
        }
        Ok(Self(z))
    }

    pub(crate) fn new_unchecked(z: Vec<f64>) -> Self {
        debug_assert!(z.first() == Some(&1.0));
        Self(z)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when `z[t+1] <= z[t]` for every `t`, the first gate included.
    pub fn is_non_increasing(&self) -> bool {
        self.0.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Attention weights on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Contract("empty attention weights".into()));
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Contract("attention weight outside [0, 1]".into()));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("attention weights sum to {total}")));
        }
        Ok(Self(alpha))
    }

    pub(crate) fn new_unchecked(alpha: Vec<f64>) -> Self {
        Self(alpha)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Intermediate contexts `d_{u,1:T}` (one row each) and the final context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTrace {
    pub d: Mat64,
    pub final_context: Vec<f64>,
}

/// Attention mass accumulated over completed decoder steps, per frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeedbackState {
    cum_alpha: Vec<f64>,
    steps: usize,
}

impl FeedbackState {
    pub fn new(frames: usize) -> Self {
        Self {
            cum_alpha: vec![0.0; frames],
            steps: 0,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cum_alpha
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Accumulated weight at zero-based frame `t`; frames never covered read as zero.
    pub fn at(&self, t: usize) -> f64 {
        self.cum_alpha.get(t).copied().unwrap_or(0.0)
    }

    /// Adds one completed step's weights. Shorter vectors are zero-padded;
    /// longer ones grow the state (streaming sessions learn `T` late).
    pub fn accumulate(&mut self, weights: &[f64]) {
        if weights.len() > self.cum_alpha.len() {
            self.cum_alpha.resize(weights.len(), 0.0);
        }
        for (c, w) in self.cum_alpha.iter_mut().zip(weights) {
            *c += w;
        }
        self.steps += 1;
    }

    pub fn check_frames(&self, frames: usize) -> Result<()> {
        check_len("FeedbackState", frames, self.cum_alpha.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_sequence_validation() {
        assert!(GateSequence::new(vec![1.0, 0.5]).is_ok());
        assert!(GateSequence::new(vec![0.9, 0.5]).is_err());
        assert!(GateSequence::new(vec![1.0, 1.5]).is_err());
        assert!(GateSequence::new(vec![]).is_err());
    }

    #[test]
    fn attention_weights_validation() {
        assert!(AttentionWeights::new(vec![0.25, 0.75]).is_ok());
        assert!(AttentionWeights::new(vec![0.5, 0.6]).is_err());
        assert!(AttentionWeights::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn encoded_sequence_needs_frames() {
        assert!(EncodedSequence::new(Mat64::zeros(0, 3)).is_err());
    }

    #[test]
    fn feedback_grows_and_bounds() {
        let mut fb = FeedbackState::new(2);
        fb.accumulate(&[0.5, 0.5]);
        fb.accumulate(&[0.0, 0.25, 0.75]);
        assert_eq!(fb.as_slice(), &[0.5, 0.75, 0.75]);
        assert_eq!(fb.steps(), 2);
        assert!(fb.as_slice().iter().all(|&c| (0.0..=2.0).contains(&c)));
        assert_eq!(fb.at(10), 0.0);
    }
}
