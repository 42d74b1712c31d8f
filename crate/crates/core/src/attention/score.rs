//! Additive score with attention-weight feedback:
//! `e = vᵀ tanh(W [s; h; β] + η)`, `β_t = σ(v_βᵀ h_t) · Σ_{k<u} α_{k,t}`.
//!
//! `W` is stored as three column blocks `[W_s | W_h | w_β]` so the frame
//! projection `W_h h_t` can be computed once per utterance.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{EncodedSequence, FeedbackState, ScoreRow};
use crate::error::{check_len, Result};
use crate::numerics::{dot, logistic, matvec, CustomOp, Mat64, NodeRef, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// `d_a x d_s`
    pub w_s: Mat64,
    /// `d_a x d_h`
    pub w_h: Mat64,
    /// `d_a x 1`, the feedback column of `W`.
    pub w_beta: Mat64,
    /// `d_a x 1`
    pub eta: Mat64,
    /// `d_a x 1`
    pub v: Mat64,
    /// `d_h x 1`
    pub v_beta: Mat64,
    /// `1 x 1` gate bias `b`; only the gated and monotonic variants read it.
    pub b: Mat64,
}

impl ScoreParams {
    pub fn zeros(d_s: usize, d_h: usize, d_a: usize) -> Self {
        Self {
            w_s: Mat64::zeros(d_a, d_s),
            w_h: Mat64::zeros(d_a, d_h),
            w_beta: Mat64::zeros(d_a, 1),
            eta: Mat64::zeros(d_a, 1),
            v: Mat64::zeros(d_a, 1),
            v_beta: Mat64::zeros(d_h, 1),
            b: Mat64::zeros(1, 1),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(rng: &mut R, d_s: usize, d_h: usize, d_a: usize) -> Self {
        let mut p = Self::zeros(d_s, d_h, d_a);
        let fan_in = d_s + d_h + 1;
        glorot_fill(rng, &mut p.w_s, fan_in, d_a);
        glorot_fill(rng, &mut p.w_h, fan_in, d_a);
        glorot_fill(rng, &mut p.w_beta, fan_in, d_a);
        glorot_fill(rng, &mut p.v, d_a, 1);
        glorot_fill(rng, &mut p.v_beta, d_h, 1);
        p
    }

    pub fn attention_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn bias(&self) -> f64 {
        self.b.get(0, 0)
    }

    pub fn tensors(&self) -> [(&'static str, &Mat64); 7] {
        [
            ("w_s", &self.w_s),
            ("w_h", &self.w_h),
            ("w_beta", &self.w_beta),
            ("eta", &self.eta),
            ("v", &self.v),
            ("v_beta", &self.v_beta),
            ("b", &self.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Mat64); 7] {
        [
            ("w_s", &mut self.w_s),
            ("w_h", &mut self.w_h),
            ("w_beta", &mut self.w_beta),
            ("eta", &mut self.eta),
            ("v", &mut self.v),
            ("v_beta", &mut self.v_beta),
            ("b", &mut self.b),
        ]
    }

    /// Decoder-side projection `W_s s + η`.
    pub fn query(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut q = matvec(&self.w_s, s)?;
        for (qi, ei) in q.iter_mut().zip(self.eta.as_slice()) {
            *qi += ei;
        }
        Ok(q)
    }

    /// Frame-side projection `W_h h_t` and feedback gate `σ(v_βᵀ h_t)`.
    pub fn key(&self, h_t: &[f64]) -> Result<FrameKey> {
        let proj = matvec(&self.w_h, h_t)?;
        check_len("ScoreParams::key", self.v_beta.rows(), h_t.len())?;
        let gate = logistic(dot(h_t, self.v_beta.as_slice()));
        Ok(FrameKey { proj, gate })
    }

    /// Score from precomputed parts; shared by the plain and tape paths so both
    /// produce identical bits.
    #[inline]
    pub fn score_parts(&self, query: &[f64], key: &FrameKey, cum_alpha: f64) -> f64 {
        score_kernel(
            query,
            &key.proj,
            key.gate * cum_alpha,
            self.w_beta.as_slice(),
            self.v.as_slice(),
        )
    }
}

pub(crate) fn glorot_fill<R: Rng>(rng: &mut R, m: &mut Mat64, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in m.as_mut_slice() {
        *x = rng.gen_range(-limit..limit);
    }
}

/// Per-frame precomputation for the score.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameKey {
    pub proj: Vec<f64>,
    pub gate: f64,
}

#[inline]
fn score_kernel(q: &[f64], kh: &[f64], beta: f64, w_beta: &[f64], v: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..q.len() {
        e += v[i] * (q[i] + kh[i] + beta * w_beta[i]).tanh();
    }
    e
}

/// Single score `e_{u,t}` for zero-based frame `t`, without the gate bias.
pub fn additive_score(
    s_u: &[f64],
    h_t: &[f64],
    feedback: &FeedbackState,
    t: usize,
    params: &ScoreParams,
) -> Result<f64> {
    let q = params.query(s_u)?;
    let key = params.key(h_t)?;
    Ok(params.score_parts(&q, &key, feedback.at(t)))
}

/// Frame keys of a whole utterance.
#[derive(Clone, Debug)]
pub struct ScoreKeys {
    keys: Vec<FrameKey>,
}

impl ScoreKeys {
    pub fn new(params: &ScoreParams, h: &EncodedSequence) -> Result<Self> {
        let keys = (0..h.len())
            .map(|t| params.key(h.frame(t)))
            .collect::<Result<_>>()?;
        Ok(Self { keys })
    }

    pub fn get(&self, t: usize) -> &FrameKey {
        &self.keys[t]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Scores for every frame at one decoder step; `bias` is carried, not added.
    pub fn score_row(
        &self,
        params: &ScoreParams,
        s_u: &[f64],
        feedback: &FeedbackState,
    ) -> Result<ScoreRow> {
        let q = params.query(s_u)?;
        let e = self
            .keys
            .iter()
            .enumerate()
            .map(|(t, k)| params.score_parts(&q, k, feedback.at(t)))
            .collect();
        Ok(ScoreRow::with_bias(e, params.bias()))
    }
}

/// Tape op over inputs `[query (d_a), kh (T x d_a), beta (T), w_beta (d_a), v (d_a)]`.
#[derive(Debug, Default)]
pub struct AdditiveScoresOp;

impl CustomOp for AdditiveScoresOp {
    fn name(&self) -> &'static str {
        "additive_scores"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let [q, kh, beta, wb, v] = inputs else {
            panic!("additive_scores takes five inputs")
        };
        let t_len = kh.rows;
        let e = (0..t_len)
            .map(|t| score_kernel(q.value, kh.row(t), beta.value[t], wb.value, v.value))
            .collect();
        (e, t_len, 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], _: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        let [q, kh, beta, wb, v] = inputs else {
            unreachable!()
        };
        let d_a = q.len();
        let mut gpre = vec![0.0; d_a];
        for t in 0..kh.rows {
            let krow = kh.row(t);
            let b = beta.value[t];
            let mut gbeta = 0.0;
            for i in 0..d_a {
                let a = (q.value[i] + krow[i] + b * wb.value[i]).tanh();
                grad[4][i] += g[t] * a;
                gpre[i] = g[t] * v.value[i] * (1.0 - a * a);
                gbeta += gpre[i] * wb.value[i];
                grad[3][i] += gpre[i] * b;
            }
            grad[2][t] += gbeta;
            for i in 0..d_a {
                grad[0][i] += gpre[i];
                grad[1][t * d_a + i] += gpre[i];
            }
        }
    }
}

/// Tape-side score parameters and per-utterance keys.
#[derive(Clone, Copy, Debug)]
pub struct TapeScore {
    pub w_s: Var,
    pub eta: Var,
    pub w_beta: Var,
    pub v: Var,
    pub b: Var,
    /// `T x d_a` frame projections.
    pub kh: Var,
    /// `T` feedback gates `σ(v_βᵀ h_t)`.
    pub fb_gate: Var,
}

impl TapeScore {
    /// Records the per-utterance keys for encoded frames `h` (`T x d_h`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tape: &mut Tape,
        h: Var,
        w_s: Var,
        w_h: Var,
        w_beta: Var,
        eta: Var,
        v: Var,
        v_beta: Var,
        b: Var,
    ) -> Self {
        let kh = tape.matmul_t(h, w_h);
        let hv = tape.matvec(h, v_beta);
        let fb_gate = tape.logistic(hv);
        Self {
            w_s,
            eta,
            w_beta,
            v,
            b,
            kh,
            fb_gate,
        }
    }

    /// Score vector (no bias) for decoder state `s` and accumulated feedback `cum` (length `T`).
    pub fn scores(&self, tape: &mut Tape, s: Var, cum: Var) -> Var {
        let ws = tape.matvec(self.w_s, s);
        let q = tape.add(ws, self.eta);
        let beta = tape.mul(self.fb_gate, cum);
        tape.custom(
            Arc::new(AdditiveScoresOp),
            &[q, self.kh, beta, self.w_beta, self.v],
        )
    }
}
