//! Monotonic chunkwise attention: hard endpoint plus chunk softmax at
//! inference, expected-alignment relaxation for training, and the
//! survivor-product selection probability of the stabilized variant.

use std::sync::Arc;

use crate::attention::gsa::weighted_sum;
use crate::attention::{EncodedSequence, ScoreRow};
use crate::error::{check_len, Error, Result};
use crate::numerics::{logistic, softmax, CustomOp, NodeRef, Tape, Var};

/// Stopping probabilities are clamped into `[ε, 1 - ε]` before the recursion.
pub const STOP_PROB_EPS: f64 = 1e-6;

/// Stopping probability at which the inference scan declares an endpoint.
pub const ENDPOINT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicState {
    /// One-based endpoint of the previous decoder step (1 before the first step).
    pub tau_prev: usize,
    /// Stopping probabilities of the last step; frames not scanned hold 0.
    pub p: Vec<f64>,
    /// Selection probabilities of the last step (one-hot at the endpoint, or
    /// all zero when no endpoint fired).
    pub alpha_sel: Vec<f64>,
}

impl MonotonicState {
    pub fn new(frames: usize) -> Self {
        Self {
            tau_prev: 1,
            p: vec![0.0; frames],
            alpha_sel: vec![0.0; frames],
        }
    }
}

/// Result of one MoChA inference step.
#[derive(Clone, Debug, PartialEq)]
pub struct MochaStep {
    pub context: Vec<f64>,
    /// Chunk softmax weights padded to `T` frames.
    pub weights: Vec<f64>,
    /// One-based endpoint, `None` when the scan found nothing.
    pub endpoint: Option<usize>,
    pub state: MonotonicState,
}

/// Hard monotonic decoding step. Scans from the previous endpoint for the
/// first frame with `σ(ẽ + b) >= 0.5`, then attends with a softmax over the
/// `w` frames ending there. Without an endpoint the context is zero and the
/// next scan starts at `T`.
pub fn mocha_infer(
    e_mono: &ScoreRow,
    e_chunk: &[f64],
    h: &EncodedSequence,
    state: &MonotonicState,
    w: usize,
) -> Result<MochaStep> {
    let frames = h.len();
    check_len("mocha_infer", frames, e_mono.len())?;
    check_len("mocha_infer", frames, e_chunk.len())?;
    if w == 0 {
        return Err(Error::Contract("chunk length must be at least 1".into()));
    }
    if state.tau_prev == 0 || state.tau_prev > frames {
        return Err(Error::Contract(format!(
            "previous endpoint {} outside 1..={frames}",
            state.tau_prev
        )));
    }

    let mut p = vec![0.0; frames];
    let mut endpoint = None;
    for (t, pt) in p.iter_mut().enumerate().skip(state.tau_prev - 1) {
        *pt = logistic(e_mono.biased(t));
        if *pt >= ENDPOINT_THRESHOLD {
            endpoint = Some(t + 1);
            break;
        }
    }

    let mut weights = vec![0.0; frames];
    let mut alpha_sel = vec![0.0; frames];
    let (context, tau) = match endpoint {
        Some(tau) => {
            let lo = tau.saturating_sub(w);
            weights[lo..tau].copy_from_slice(&softmax(&e_chunk[lo..tau]));
            alpha_sel[tau - 1] = 1.0;
            (weighted_sum(&weights, h)?, tau)
        }
        None => (vec![0.0; h.dim()], frames),
    };
    Ok(MochaStep {
        context,
        weights,
        endpoint,
        state: MonotonicState {
            tau_prev: tau,
            p,
            alpha_sel,
        },
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(STOP_PROB_EPS, 1.0 - STOP_PROB_EPS)
}

/// Expected selection probabilities
/// `α_t = p_t ((1 - p_{t-1}) α_{t-1} / p_{t-1} + α_prev_t)`, `α_0 = 0`.
/// `alpha_prev = None` stands for the first decoder step (all mass on frame 1).
///
/// Evaluated through `q_t = α_t / p_t = (1 - p_{t-1}) q_{t-1} + α_prev_t`,
/// which is the same recursion without the division.
pub fn mocha_train_alpha(p: &[f64], alpha_prev: Option<&[f64]>) -> Result<Vec<f64>> {
    let prev = match alpha_prev {
        Some(a) => {
            check_len("mocha_train_alpha", p.len(), a.len())?;
            a.to_vec()
        }
        None => first_step_prior(p.len()),
    };
    let p: Vec<f64> = p.iter().map(|&x| clamp_prob(x)).collect();
    Ok(alpha_scan(&p, &prev).0)
}

pub fn first_step_prior(frames: usize) -> Vec<f64> {
    let mut a = vec![0.0; frames];
    if let Some(first) = a.first_mut() {
        *first = 1.0;
    }
    a
}

fn alpha_scan(p: &[f64], prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut q = vec![0.0; p.len()];
    let mut alpha = vec![0.0; p.len()];
    for t in 0..p.len() {
        q[t] = prev[t] + if t == 0 { 0.0 } else { (1.0 - p[t - 1]) * q[t - 1] };
        alpha[t] = p[t] * q[t];
    }
    (alpha, q)
}

/// Softmax weights of the chunk ending at zero-based `k`, covering `[k+1-w, k]`
/// clipped at the first frame.
fn chunk_softmax(e: &[f64], k: usize, w: usize) -> (usize, Vec<f64>) {
    let lo = (k + 1).saturating_sub(w);
    (lo, softmax(&e[lo..=k]))
}

/// Expected chunk weights
/// `β_t = Σ_{k=t}^{t+w-1} α_k exp(e_t) / Σ_{l=k-w+1}^{k} exp(e_l)`.
pub fn mocha_train_beta(alpha: &[f64], e: &ScoreRow, w: usize) -> Result<Vec<f64>> {
    check_len("mocha_train_beta", alpha.len(), e.len())?;
    if w == 0 {
        return Err(Error::Contract("chunk length must be at least 1".into()));
    }
    Ok(beta_forward(alpha, &e.e, w))
}

fn beta_forward(alpha: &[f64], e: &[f64], w: usize) -> Vec<f64> {
    let mut beta = vec![0.0; alpha.len()];
    for (k, &ak) in alpha.iter().enumerate() {
        if ak == 0.0 {
            continue;
        }
        let (lo, sm) = chunk_softmax(e, k, w);
        for (i, s) in sm.iter().enumerate() {
            beta[lo + i] += ak * s;
        }
    }
    beta
}

/// Stabilized selection probability `α_t = p_t Π_{j<t} (1 - p_j)`.
pub fn smocha_alpha(p: &[f64]) -> Vec<f64> {
    let mut survive = 1.0;
    p.iter()
        .map(|&pt| {
            let a = pt * survive;
            survive *= 1.0 - pt;
            a
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tape primitives

/// Tape op over `[p (clamped), alpha_prev]`.
#[derive(Debug, Default)]
pub struct MochaAlphaOp;

impl CustomOp for MochaAlphaOp {
    fn name(&self) -> &'static str {
        "mocha_alpha"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let (p, prev) = (inputs[0].value, inputs[1].value);
        assert_eq!(p.len(), prev.len(), "mocha_alpha shape");
        (alpha_scan(p, prev).0, p.len(), 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], _: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        let (p, prev) = (inputs[0].value, inputs[1].value);
        let (_, q) = alpha_scan(p, prev);
        // q_{t+1} = (1 - p_t) q_t + prev_{t+1}
        let mut gq_next = 0.0;
        for t in (0..p.len()).rev() {
            let gq = g[t] * p[t] + gq_next * (1.0 - p[t]);
            grad[0][t] += g[t] * q[t] - gq_next * q[t];
            grad[1][t] += gq;
            gq_next = gq;
        }
    }
}

/// Tape op over `[alpha, e]` with chunk length `w`.
#[derive(Debug)]
pub struct MochaBetaOp {
    pub w: usize,
}

impl CustomOp for MochaBetaOp {
    fn name(&self) -> &'static str {
        "mocha_beta"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let (alpha, e) = (inputs[0].value, inputs[1].value);
        assert_eq!(alpha.len(), e.len(), "mocha_beta shape");
        (beta_forward(alpha, e, self.w), alpha.len(), 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], _: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        let (alpha, e) = (inputs[0].value, inputs[1].value);
        for k in 0..alpha.len() {
            let (lo, sm) = chunk_softmax(e, k, self.w);
            let gwin = &g[lo..=k];
            let inner: f64 = sm.iter().zip(gwin).map(|(s, gi)| s * gi).sum();
            grad[0][k] += inner;
            for (i, s) in sm.iter().enumerate() {
                grad[1][lo + i] += alpha[k] * s * (gwin[i] - inner);
            }
        }
    }
}

/// Records the training-time MoChA weights: clamped stopping probabilities,
/// expected selection and expected chunk weights. Returns `(alpha, beta)`.
pub fn tape_mocha(
    tape: &mut Tape,
    mono_scores_biased: Var,
    chunk_scores: Var,
    alpha_prev: Var,
    w: usize,
) -> (Var, Var) {
    let p = tape.logistic(mono_scores_biased);
    let p = tape.clamp(p, STOP_PROB_EPS, 1.0 - STOP_PROB_EPS);
    let alpha = tape.custom(Arc::new(MochaAlphaOp), &[p, alpha_prev]);
    let beta = tape.custom(Arc::new(MochaBetaOp { w }), &[alpha, chunk_scores]);
    (alpha, beta)
}
