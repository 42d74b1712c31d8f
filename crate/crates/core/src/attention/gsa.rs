//! Global soft attention.

use super::types::{AttentionWeights, EncodedSequence, ScoreRow};
use crate::error::{check_len, Error, Result};
use crate::numerics::{axpy, softmax};

/// Softmax over the whole score row. The gate bias is irrelevant here (shift invariance).
pub fn softmax_weights(e: &ScoreRow) -> Result<AttentionWeights> {
    if e.is_empty() {
        return Err(Error::Contract("softmax over zero frames".into()));
    }
    Ok(AttentionWeights::new_unchecked(softmax(&e.e)))
}

/// `c = Σ_t α_t h_t`.
pub fn gsa_context(alpha: &AttentionWeights, h: &EncodedSequence) -> Result<Vec<f64>> {
    weighted_sum(alpha.as_slice(), h)
}

pub(crate) fn weighted_sum(weights: &[f64], h: &EncodedSequence) -> Result<Vec<f64>> {
    check_len("weighted_sum", h.len(), weights.len())?;
    let mut c = vec![0.0; h.dim()];
    for (t, &w) in weights.iter().enumerate() {
        axpy(w, h.frame(t), &mut c);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1(v: &[f64]) -> EncodedSequence {
        let rows: Vec<[f64; 1]> = v.iter().map(|&x| [x]).collect();
        EncodedSequence::from_rows(&rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let w = softmax_weights(&ScoreRow::new(vec![0.0, 0.0])).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);

        let w = softmax_weights(&ScoreRow::new(vec![2f64.ln(), 0.0])).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        let a = softmax_weights(&ScoreRow::new(x)).unwrap();
        let b = softmax_weights(&ScoreRow::new(shifted)).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax_weights(&ScoreRow::new(vec![700.0, -700.0, 3.0])).unwrap();
        let s: f64 = w.as_slice().iter().sum();
        assert!((s - 1.0).abs() < AttentionWeights::SUM_TOLERANCE);
    }

    #[test]
    fn context_examples() {
        let h = EncodedSequence::from_rows(&[[1.0, -1.0], [2.0, 5.0], [3.0, 0.5]]).unwrap();
        let one_hot = AttentionWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(gsa_context(&one_hot, &h).unwrap(), vec![1.0, -1.0]);

        let w = AttentionWeights::new(vec![0.25, 0.25, 0.5]).unwrap();
        assert_eq!(gsa_context(&w, &h1(&[1.0, 2.0, 4.0])).unwrap(), vec![2.75]);

        let flat = EncodedSequence::from_rows(&[[7.0, 2.0]; 4]).unwrap();
        let u = AttentionWeights::new(vec![0.25; 4]).unwrap();
        assert_eq!(gsa_context(&u, &flat).unwrap(), vec![7.0, 2.0]);
    }

    #[test]
    fn context_length_mismatch() {
        let w = AttentionWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(gsa_context(&w, &h1(&[1.0, 2.0, 3.0])).is_err());
    }
}
