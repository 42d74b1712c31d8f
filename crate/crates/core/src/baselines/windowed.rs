//! Windowed attention: softmax over `w` frames starting at the previous
//! step's argmax.

use std::ops::Range;

use crate::attention::gsa::weighted_sum;
use crate::attention::{AttentionWeights, EncodedSequence};
use crate::error::{check_len, Error, Result};
use crate::numerics::softmax;

/// Window of one decoder step: one-based start `p_u` and length `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub start: usize,
    pub w: usize,
}

impl WindowSpec {
    pub fn new(start: usize, w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::Contract("window length must be at least 1".into()));
        }
        Ok(Self { start, w })
    }

    /// Zero-based frame range after clamping to `[1, T]`.
    pub fn range(&self, frames: usize) -> Result<Range<usize>> {
        let start = self.start.max(1);
        let end = (start + self.w - 1).min(frames);
        if start > end {
            return Err(Error::Contract(format!(
                "window [{start}, {}] is empty inside {frames} frames",
                start + self.w - 1
            )));
        }
        Ok(start - 1..end)
    }
}

/// One-based argmax of the previous step's weights; ties go to the earliest frame.
pub fn window_start(alpha_prev: &[f64]) -> usize {
    let mut best = 0;
    for (t, &a) in alpha_prev.iter().enumerate() {
        if a > alpha_prev[best] {
            best = t;
        }
    }
    best + 1
}

/// Softmax over the window scores and the context it induces. Returned weights
/// are padded to all `T` frames and are exactly zero outside the window.
pub fn windowed_attend(
    e_window: &[f64],
    h: &EncodedSequence,
    window: WindowSpec,
) -> Result<(Vec<f64>, AttentionWeights)> {
    let range = window.range(h.len())?;
    check_len("windowed_attend", range.len(), e_window.len())?;
    let mut alpha = vec![0.0; h.len()];
    alpha[range.clone()].copy_from_slice(&softmax(e_window));
    let context = weighted_sum(&alpha, h)?;
    Ok((context, AttentionWeights::new_unchecked(alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h1(v: &[f64]) -> EncodedSequence {
        let rows: Vec<[f64; 1]> = v.iter().map(|&x| [x]).collect();
        EncodedSequence::from_rows(&rows).unwrap()
    }

    #[test]
    fn singleton_after_clamping() {
        let h = h1(&[5.0]);
        let win = WindowSpec::new(1, 3).unwrap();
        assert_eq!(win.range(1).unwrap(), 0..1);
        let (c, a) = windowed_attend(&[0.4], &h, win).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        assert_eq!(c, vec![5.0]);
    }

    #[test]
    fn uniform_window() {
        let h = h1(&[1.0, 2.0, 4.0]);
        let (c, a) = windowed_attend(&[0.0, 0.0], &h, WindowSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.5, 0.5]);
        assert_eq!(c, vec![3.0]);
    }

    #[test]
    fn empty_window_is_rejected() {
        assert!(WindowSpec::new(4, 2).unwrap().range(3).is_err());
        assert!(WindowSpec::new(1, 0).is_err());
    }

    #[test]
    fn start_examples() {
        assert_eq!(window_start(&[0.1, 0.7, 0.2]), 2);
        assert_eq!(window_start(&[0.0, 0.0, 1.0]), 3);
        assert_eq!(window_start(&[0.5, 0.5]), 1);
    }

    proptest! {
        #[test]
        fn weights_form_simplex_on_window(
            e in proptest::collection::vec(-20.0f64..20.0, 1..12),
            start in 1usize..15,
            w in 1usize..6,
        ) {
            let frames = 12;
            let h = h1(&vec![1.0; frames]);
            let win = WindowSpec::new(start, w).unwrap();
            if let Ok(range) = win.range(frames) {
                if range.len() <= e.len() {
                    let (_, a) = windowed_attend(&e[..range.len()], &h, win).unwrap();
                    let total: f64 = a.as_slice().iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                    for (t, &x) in a.as_slice().iter().enumerate() {
                        prop_assert!(range.contains(&t) || x == 0.0);
                    }
                }
            }
        }
    }
}
