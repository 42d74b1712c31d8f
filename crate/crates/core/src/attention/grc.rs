//! Gated recurrent context: the gated recursion, its dual attention weights
//! and the decreasing-gate variant used for online decoding.
//!
//! Gates follow the printed sign convention `z = 1 / (1 + exp(e))`, so a high
//! score closes the gate. The first gate is always exactly one.

use std::sync::Arc;

use super::types::{AttentionWeights, ContextTrace, EncodedSequence, GateSequence, ScoreRow};
use crate::error::{check_len, Error, Result};
use crate::numerics::{logistic, CustomOp, LogSumExpAcc, Mat64, NodeRef, Tape, Var};

/// Denominators below this are treated as zero when inverting the dual map.
pub const INVERSE_ZERO_TOL: f64 = 1e-12;

/// `1 / (1 + exp(e))`.
#[inline]
pub fn grc_gate(e: f64) -> f64 {
    logistic(-e)
}

/// Gates of the global variant: `z_1 = 1`, `z_t = grc_gate(e_t + b)`.
pub fn grc_gates(e: &ScoreRow) -> Result<GateSequence> {
    if e.is_empty() {
        return Err(Error::Contract("gates over zero frames".into()));
    }
    let z = (0..e.len())
        .map(|t| if t == 0 { 1.0 } else { grc_gate(e.biased(t)) })
        .collect();
    Ok(GateSequence::new_unchecked(z))
}

/// Decreasing gates `z_t = 1 / (1 + Σ_{j<=t} exp(e_j + b))` for `t >= 2`,
/// evaluated as `logistic(-L_t)` with `L_t` the running log-sum-exp.
pub fn decgrc_gates(e: &ScoreRow) -> Result<GateSequence> {
    if e.is_empty() {
        return Err(Error::Contract("gates over zero frames".into()));
    }
    let mut acc = LogSumExpAcc::new();
    let z = (0..e.len())
        .map(|t| {
            acc.push(e.biased(t));
            if t == 0 {
                1.0
            } else {
                decgrc_gate_from_lse(acc.value())
            }
        })
        .collect();
    Ok(GateSequence::new_unchecked(z))
}

/// `exp(-softplus(L)) = 1 / (1 + exp(L))`.
#[inline]
pub fn decgrc_gate_from_lse(lse: f64) -> f64 {
    logistic(-lse)
}

/// One step of `d <- (1 - z) d + z h`.
#[inline]
pub fn recurse_step(d: &mut [f64], z: f64, h: &[f64]) {
    for (di, hi) in d.iter_mut().zip(h) {
        *di = (1.0 - z) * *di + z * hi;
    }
}

/// Runs the recursion over all frames and keeps every intermediate context.
pub fn grc_recurse(h: &EncodedSequence, z: &GateSequence) -> Result<ContextTrace> {
    check_len("grc_recurse", h.len(), z.len())?;
    let mut d = Mat64::zeros(h.len(), h.dim());
    let mut cur = h.frame(0).to_vec();
    d.row_mut(0).copy_from_slice(&cur);
    for t in 1..h.len() {
        recurse_step(&mut cur, z.as_slice()[t], h.frame(t));
        d.row_mut(t).copy_from_slice(&cur);
    }
    Ok(ContextTrace {
        d,
        final_context: cur,
    })
}

/// `d_{u,tau}` for a one-based frame count `tau`.
pub fn intermediate_context(h: &EncodedSequence, z: &GateSequence, tau: usize) -> Result<Vec<f64>> {
    check_len("intermediate_context", h.len(), z.len())?;
    if tau == 0 || tau > h.len() {
        return Err(Error::Contract(format!(
            "endpoint {tau} outside 1..={}",
            h.len()
        )));
    }
    let mut cur = h.frame(0).to_vec();
    for t in 1..tau {
        recurse_step(&mut cur, z.as_slice()[t], h.frame(t));
    }
    Ok(cur)
}

/// `ᾱ(z)_t = z_t Π_{j>t} (1 - z_j)`, one backward scan with a running suffix product.
pub fn dual_weights(z: &GateSequence) -> AttentionWeights {
    AttentionWeights::new_unchecked(dual_weights_raw(z.as_slice()))
}

pub(crate) fn dual_weights_raw(z: &[f64]) -> Vec<f64> {
    let mut alpha = vec![0.0; z.len()];
    let mut survive = 1.0;
    for t in (0..z.len()).rev() {
        alpha[t] = z[t] * survive;
        survive *= 1.0 - z[t];
    }
    alpha
}

/// Dual weights of the first `tau` gates, zero-padded to `total` frames.
pub fn padded_dual_weights(z: &[f64], tau: usize, total: usize) -> Vec<f64> {
    let mut w = dual_weights_raw(&z[..tau]);
    w.resize(total, 0.0);
    w
}

/// Inverse of [`dual_weights`]: `z_t = α_t / (1 - Σ_{j>t} α_j)`, zero when the
/// denominator vanishes. On the simplex `1 - Σ_{j>t} α_j = Σ_{j<=t} α_j`, and
/// the prefix form is used because it does not cancel.
pub fn inverse_dual(alpha: &AttentionWeights) -> GateSequence {
    let a = alpha.as_slice();
    let mut z = Vec::with_capacity(a.len());
    let mut prefix = 0.0;
    for (t, &at) in a.iter().enumerate() {
        prefix += at;
        let zt = if t == 0 {
            1.0
        } else if prefix < INVERSE_ZERO_TOL {
            0.0
        } else {
            (at / prefix).clamp(0.0, 1.0)
        };
        z.push(zt);
    }
    GateSequence::new_unchecked(z)
}

// ---------------------------------------------------------------------------
// Tape primitives

/// Tape op: score vector (bias already added) to global gates.
#[derive(Debug, Default)]
pub struct GrcGatesOp;

impl CustomOp for GrcGatesOp {
    fn name(&self) -> &'static str {
        "grc_gates"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let e = inputs[0].value;
        let z: Vec<f64> = (0..e.len())
            .map(|t| if t == 0 { 1.0 } else { grc_gate(e[t]) })
            .collect();
        (z, e.len(), 1)
    }

    fn backward(&self, _: &[NodeRef<'_>], z: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        for t in 1..z.len() {
            grad[0][t] -= g[t] * z[t] * (1.0 - z[t]);
        }
    }
}

/// Tape op: score vector (bias already added) to decreasing gates.
#[derive(Debug, Default)]
pub struct DecGrcGatesOp;

impl DecGrcGatesOp {
    fn running_lse(e: &[f64]) -> Vec<f64> {
        let mut acc = LogSumExpAcc::new();
        e.iter()
            .map(|&x| {
                acc.push(x);
                acc.value()
            })
            .collect()
    }
}

impl CustomOp for DecGrcGatesOp {
    fn name(&self) -> &'static str {
        "decgrc_gates"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let e = inputs[0].value;
        let lse = Self::running_lse(e);
        let z: Vec<f64> = lse
            .iter()
            .enumerate()
            .map(|(t, &l)| if t == 0 { 1.0 } else { decgrc_gate_from_lse(l) })
            .collect();
        (z, e.len(), 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], z: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        // dz_t/dL_t = -z_t (1 - z_t); dL_t/de_j = exp(e_j - L_t) for j <= t.
        // S_j = Σ_{t>=j} gL_t exp(L_j - L_t), accumulated from the back so every
        // exponent is non-positive.
        let e = inputs[0].value;
        let lse = Self::running_lse(e);
        let n = e.len();
        let mut s = 0.0;
        for j in (0..n).rev() {
            if j + 1 < n {
                s *= (lse[j] - lse[j + 1]).exp();
            }
            if j > 0 {
                s += -g[j] * z[j] * (1.0 - z[j]);
            }
            grad[0][j] += (e[j] - lse[j]).exp() * s;
        }
    }
}

/// Tape op: gates to dual attention weights.
#[derive(Debug, Default)]
pub struct DualWeightsOp;

impl CustomOp for DualWeightsOp {
    fn name(&self) -> &'static str {
        "dual_weights"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let z = inputs[0].value;
        (dual_weights_raw(z), z.len(), 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], _: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        // α_k = z_k Q_{k,t} (1 - z_t) P_t for k < t, so
        // dα/dz_t contracted with g is g_t P_t - P_t Σ_{k<t} g_k z_k Q_{k,t}.
        let z = inputs[0].value;
        let n = z.len();
        let mut suffix = vec![1.0; n];
        for t in (0..n.saturating_sub(1)).rev() {
            suffix[t] = suffix[t + 1] * (1.0 - z[t + 1]);
        }
        let mut r = 0.0;
        for t in 0..n {
            grad[0][t] += suffix[t] * (g[t] - r);
            r = r * (1.0 - z[t]) + g[t] * z[t];
        }
    }
}

/// Tape op: `(H, z)` to the final context `d_T`.
#[derive(Debug, Default)]
pub struct GrcRecurseOp;

impl GrcRecurseOp {
    fn trace(h: &NodeRef<'_>, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(h.rows);
        let mut cur = h.row(0).to_vec();
        out.push(cur.clone());
        for (t, &zt) in z.iter().enumerate().skip(1) {
            recurse_step(&mut cur, zt, h.row(t));
            out.push(cur.clone());
        }
        out
    }
}

impl CustomOp for GrcRecurseOp {
    fn name(&self) -> &'static str {
        "grc_recurse"
    }

    fn forward(&self, inputs: &[NodeRef<'_>]) -> (Vec<f64>, usize, usize) {
        let (h, z) = (&inputs[0], inputs[1].value);
        assert_eq!(h.rows, z.len(), "grc_recurse shape");
        let mut cur = h.row(0).to_vec();
        for (t, &zt) in z.iter().enumerate().skip(1) {
            recurse_step(&mut cur, zt, h.row(t));
        }
        (cur, h.cols, 1)
    }

    fn backward(&self, inputs: &[NodeRef<'_>], _: &[f64], g: &[f64], grad: &mut [Vec<f64>]) {
        let (h, z) = (&inputs[0], inputs[1].value);
        let d = Self::trace(h, z);
        let cols = h.cols;
        let mut carry = g.to_vec();
        for t in (1..h.rows).rev() {
            let ht = h.row(t);
            let gh = &mut grad[0][t * cols..(t + 1) * cols];
            let mut gz = 0.0;
            for k in 0..cols {
                gh[k] += z[t] * carry[k];
                gz += carry[k] * (ht[k] - d[t - 1][k]);
            }
            grad[1][t] += gz;
            for c in &mut carry {
                *c *= 1.0 - z[t];
            }
        }
        for k in 0..cols {
            grad[0][k] += carry[k];
        }
    }
}

/// Tape helpers wiring the primitives above.
pub fn tape_grc_gates(tape: &mut Tape, biased_scores: Var) -> Var {
    tape.custom(Arc::new(GrcGatesOp), &[biased_scores])
}

pub fn tape_decgrc_gates(tape: &mut Tape, biased_scores: Var) -> Var {
    tape.custom(Arc::new(DecGrcGatesOp), &[biased_scores])
}

pub fn tape_dual_weights(tape: &mut Tape, z: Var) -> Var {
    tape.custom(Arc::new(DualWeightsOp), &[z])
}

pub fn tape_grc_recurse(tape: &mut Tape, h: Var, z: Var) -> Var {
    tape.custom(Arc::new(GrcRecurseOp), &[h, z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::gsa::gsa_context;
    use crate::numerics::{grad_check, max_abs_diff};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h1(v: &[f64]) -> EncodedSequence {
        let rows: Vec<[f64; 1]> = v.iter().map(|&x| [x]).collect();
        EncodedSequence::from_rows(&rows).unwrap()
    }

    fn gates(z: &[f64]) -> GateSequence {
        GateSequence::new(z.to_vec()).unwrap()
    }

    #[test]
    fn gate_examples() {
        assert_eq!(grc_gate(0.0), 0.5);
        assert!((grc_gate(3f64.ln()) - 0.25).abs() < 1e-15);
        assert!(grc_gate(50.0) < 1e-20);
    }

    #[test]
    fn recursion_examples() {
        let h = h1(&[1.0, 2.0, 4.0]);
        let tr = grc_recurse(&h, &gates(&[1.0, 0.5, 0.5])).unwrap();
        assert_eq!(tr.d.as_slice(), &[1.0, 1.5, 2.75]);
        assert_eq!(tr.final_context, vec![2.75]);

        let frozen = grc_recurse(&h, &gates(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(frozen.final_context, vec![1.0]);
        let overwrite = grc_recurse(&h, &gates(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(overwrite.final_context, vec![4.0]);
    }

    #[test]
    fn recursion_length_mismatch() {
        assert!(grc_recurse(&h1(&[1.0, 2.0]), &gates(&[1.0])).is_err());
    }

    #[test]
    fn dual_examples() {
        assert_eq!(dual_weights(&gates(&[1.0, 0.5, 0.5])).as_slice(), &[0.25, 0.25, 0.5]);
        assert_eq!(dual_weights(&gates(&[1.0])).as_slice(), &[1.0]);
        assert_eq!(dual_weights(&gates(&[1.0, 1.0])).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn inverse_examples() {
        let w = AttentionWeights::new(vec![0.25, 0.25, 0.5]).unwrap();
        assert_eq!(inverse_dual(&w).as_slice(), &[1.0, 0.5, 0.5]);

        let w = AttentionWeights::new(vec![1.0]).unwrap();
        assert_eq!(inverse_dual(&w).as_slice(), &[1.0]);

        let w = AttentionWeights::new(vec![0.0, 1.0]).unwrap();
        let z = inverse_dual(&w);
        assert_eq!(z.as_slice(), &[1.0, 1.0]);
        assert_eq!(dual_weights(&z).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn inverse_zero_branch_gives_valid_gates() {
        let w = AttentionWeights::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let z = inverse_dual(&w);
        assert!(GateSequence::new(z.into_vec()).is_ok());
    }

    #[test]
    fn decgrc_examples() {
        let z = decgrc_gates(&ScoreRow::new(vec![0.0, 0.0, 0.0])).unwrap();
        assert_eq!(z.as_slice()[0], 1.0);
        assert!((z.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((z.as_slice()[2] - 0.25).abs() < 1e-15);

        let z = decgrc_gates(&ScoreRow::new(vec![-50.0, -50.0])).unwrap();
        assert!((z.as_slice()[1] - 1.0).abs() < 1e-20);

        let z = decgrc_gates(&ScoreRow::new(vec![0.0, 1.0, 700.0, -3.0, 2.0])).unwrap();
        assert!(z.as_slice()[2..].iter().all(|&x| x < 1e-300 && x.is_finite()));
        assert!(z.is_non_increasing());
    }

    #[test]
    fn decgrc_bias_enters_every_term() {
        let with_bias = decgrc_gates(&ScoreRow::with_bias(vec![0.0, 0.0], 2f64.ln())).unwrap();
        // 1 / (1 + 2 + 2)
        assert!((with_bias.as_slice()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn intermediate_examples() {
        let h = h1(&[1.0, 2.0, 4.0]);
        let z = gates(&[1.0, 0.5, 0.5]);
        assert_eq!(intermediate_context(&h, &z, 2).unwrap(), vec![1.5]);
        let padded = AttentionWeights::new(padded_dual_weights(z.as_slice(), 2, 3)).unwrap();
        assert_eq!(padded.as_slice(), &[0.5, 0.5, 0.0]);
        assert_eq!(gsa_context(&padded, &h).unwrap(), vec![1.5]);
        assert_eq!(intermediate_context(&h, &z, 1).unwrap(), vec![1.0]);
        assert_eq!(
            intermediate_context(&h, &z, 3).unwrap(),
            grc_recurse(&h, &z).unwrap().final_context
        );
        assert!(intermediate_context(&h, &z, 0).is_err());
        assert!(intermediate_context(&h, &z, 4).is_err());
    }

    fn random_gates(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| if t == 0 { 1.0 } else { rng.gen_range(0.0..1.0) })
            .collect()
    }

    #[test]
    fn tape_ops_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..7);
            let d = 3;

            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let err = grad_check(
                |t, x| {
                    let z = tape_grc_gates(t, x);
                    let w = t.vector((0..n).map(|i| 1.0 + i as f64).collect());
                    Ok(t.dot(z, w))
                },
                &e,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "grc gates {err}");

            let err = grad_check(
                |t, x| {
                    let z = tape_decgrc_gates(t, x);
                    let w = t.vector((0..n).map(|i| 0.5 - 0.3 * i as f64).collect());
                    Ok(t.dot(z, w))
                },
                &e,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "decgrc gates {err}");

            let z = random_gates(&mut rng, n);
            let err = grad_check(
                |t, x| {
                    let a = tape_dual_weights(t, x);
                    let w = t.vector((0..n).map(|i| (i as f64 * 0.7).cos()).collect());
                    Ok(t.dot(a, w))
                },
                &z,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "dual weights {err}");

            let mut params: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            params.extend(random_gates(&mut rng, n));
            let err = grad_check(
                |t, x| {
                    let hf = t.slice(x, 0, n * d);
                    let h = t.reshape(hf, n, d);
                    let z = t.slice(x, n * d, n);
                    let c = tape_grc_recurse(t, h, z);
                    let w = t.vector(vec![0.3, -1.1, 0.8]);
                    Ok(t.dot(c, w))
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "grc recurse {err}");
        }
    }

    #[test]
    fn tape_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e: Vec<f64> = (0..9).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut t = Tape::new();
        let x = t.vector(e.clone());
        let zg = tape_grc_gates(&mut t, x);
        let zd = tape_decgrc_gates(&mut t, x);
        let row = ScoreRow::new(e);
        assert_eq!(t.value(zg), grc_gates(&row).unwrap().as_slice());
        assert_eq!(t.value(zd), decgrc_gates(&row).unwrap().as_slice());
    }

    proptest! {
        #[test]
        fn duality_holds(seed in 0u64..10_000, n in 1usize..40, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let h = EncodedSequence::from_rows(&rows).unwrap();
            let z = gates(&random_gates(&mut rng, n));
            let lhs = grc_recurse(&h, &z).unwrap().final_context;
            let alpha = dual_weights(&z);
            let rhs = gsa_context(&alpha, &h).unwrap();
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
            let total: f64 = alpha.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(alpha.as_slice().iter().all(|a| (0.0..=1.0).contains(a)));
        }

        #[test]
        fn decgrc_gates_never_increase(e in proptest::collection::vec(-700.0f64..700.0, 1..50)) {
            let z = decgrc_gates(&ScoreRow::new(e)).unwrap();
            prop_assert!(z.is_non_increasing());
            prop_assert!(z.as_slice().iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)));
        }
    }
}
