use serde::{Deserialize, Serialize};

use crate::attention::EncodedSequence;
use crate::error::{Error, Result};
use crate::mechanism::{Attended, AttentionKind};
use crate::streaming::{stream_decode, InMemorySupplier, StreamSession};

use super::{DecoderState, EncoderOutput, Model, TokenSequence, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Output cap, counting the end token.
    pub max_len: usize,
    /// DecGRC endpoint threshold; set, it routes decoding through the streaming session.
    #[serde(default)]
    pub nu: Option<f64>,
}

impl DecodeOptions {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            beam: 1,
            max_len,
            nu: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if let Some(nu) = self.nu {
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::Config(format!("threshold {nu} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub tokens: TokenSequence,
    /// The cap was hit before an end token.
    pub truncated: bool,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
    pub trace: Vec<Attended>,
}

/// Index of the largest entry; ties go to the smallest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState,
    trace: Vec<Attended>,
}

impl Model {
    pub fn decode(&self, h: &EncodedSequence, opts: &DecodeOptions) -> Result<Decoded> {
        opts.validate()?;
        if let Some(nu) = opts.nu {
            if self.kind != AttentionKind::DecGrc {
                return Err(Error::Config(format!(
                    "threshold decoding needs decgrc attention, model uses {}",
                    self.kind
                )));
            }
            if opts.beam != 1 {
                return Err(Error::Config("threshold decoding is greedy only".into()));
            }
            let mut session = StreamSession::new(nu, opts.max_len)?;
            let out = stream_decode(self, &mut InMemorySupplier::new(h.clone()), &mut session)?;
            return Ok(out.decoded);
        }
        let enc = self.keys_for(h.clone())?;
        let greedy = self.greedy(&enc, opts.max_len)?;
        if opts.beam == 1 {
            return Ok(greedy);
        }
        let beam = self.beam(&enc, opts.beam, opts.max_len)?;
        // The search may prune the greedy path; keep whichever scores higher.
        Ok(if beam.log_prob >= greedy.log_prob { beam } else { greedy })
    }

    pub fn decode_input(&self, x: &crate::numerics::Mat64, opts: &DecodeOptions) -> Result<Decoded> {
        self.decode(&self.encode(x)?, opts)
    }

    fn greedy(&self, enc: &EncoderOutput, max_len: usize) -> Result<Decoded> {
        let mut state = self.initial_state(enc.h.len());
        let mut tokens = Vec::new();
        let mut trace = Vec::new();
        let mut log_prob = 0.0;
        while tokens.len() < max_len {
            let out = self.step(enc, &mut state)?;
            let y = argmax(&out.log_probs);
            log_prob += out.log_probs[y];
            tokens.push(y);
            trace.push(out.attended);
            state.y_prev = y;
            if y == EOS {
                break;
            }
        }
        let truncated = tokens.last() != Some(&EOS);
        Ok(Decoded {
            tokens: TokenSequence::new(tokens, self.dims.vocab)?,
            truncated,
            log_prob,
            trace,
        })
    }

    fn beam(&self, enc: &EncoderOutput, width: usize, max_len: usize) -> Result<Decoded> {
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            log_prob: 0.0,
            state: self.initial_state(enc.h.len()),
            trace: Vec::new(),
        }];
        let mut done: Vec<Hyp> = Vec::new();
        for _ in 0..max_len {
            let mut cands = Vec::new();
            for hyp in &live {
                let mut state = hyp.state.clone();
                let out = self.step(enc, &mut state)?;
                let mut order: Vec<usize> = (0..out.log_probs.len()).collect();
                order.sort_by(|&a, &b| out.log_probs[b].total_cmp(&out.log_probs[a]).then(a.cmp(&b)));
                for &y in order.iter().take(width) {
                    let mut next = Hyp {
                        tokens: hyp.tokens.clone(),
                        log_prob: hyp.log_prob + out.log_probs[y],
                        state: state.clone(),
                        trace: hyp.trace.clone(),
                    };
                    next.tokens.push(y);
                    next.trace.push(out.attended.clone());
                    next.state.y_prev = y;
                    cands.push(next);
                }
            }
            cands.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
            live.clear();
            for c in cands.into_iter().take(width) {
                if c.tokens.last() == Some(&EOS) {
                    done.push(c);
                } else {
                    live.push(c);
                }
            }
            let best_done = done.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            // Log-probabilities only decrease, so no live hypothesis can overtake.
            if live.is_empty() || live.iter().all(|h| h.log_prob <= best_done) {
                break;
            }
        }
        let truncated = done.is_empty();
        let pool = if truncated { live } else { done };
        let best = pool
            .into_iter()
            .min_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)))
            .ok_or_else(|| Error::Contract("beam search kept no hypothesis".into()))?;
        Ok(Decoded {
            tokens: TokenSequence::new(best.tokens, self.dims.vocab)?,
            truncated,
            log_prob: best.log_prob,
            trace: best.trace,
        })
    }

    /// Log-probability of a fixed output sequence under teacher forcing.
    pub fn sequence_log_prob(&self, h: &EncodedSequence, tokens: &[usize]) -> Result<f64> {
        let enc = self.keys_for(h.clone())?;
        let mut state = self.initial_state(enc.h.len());
        let mut total = 0.0;
        for &y in tokens {
            let out = self.step(&enc, &mut state)?;
            total += out.log_probs.get(y).ok_or_else(|| Error::Contract(format!("token {y} outside vocabulary")))?;
            state.y_prev = y;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::small_dims;
    use crate::model::{ModelDims, ModelParams};
    use crate::numerics::Mat64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encoded(t: usize, seed: u64) -> EncodedSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        EncodedSequence::from_rows(&rows).unwrap()
    }

    #[test]
    fn degenerate_readout_emits_only_eos() {
        let dims = ModelDims {
            vocab: 2,
            ..small_dims()
        };
        let mut params = ModelParams::zeros(&dims, false);
        params.out_b = Mat64::column(vec![5.0, 0.0]).unwrap();
        let model = Model::from_params(dims, AttentionKind::Gsa, params).unwrap();
        for beam in [1, 3] {
            let out = model
                .decode(&encoded(3, 0), &DecodeOptions { beam, max_len: 5, nu: None })
                .unwrap();
            assert_eq!(out.tokens.as_slice(), &[EOS]);
            assert!(!out.truncated);
        }
    }

    #[test]
    fn cap_sets_truncation_flag() {
        let dims = small_dims();
        let mut params = ModelParams::zeros(&dims, false);
        params.out_b = Mat64::column(vec![-5.0, 3.0, 0.0, 0.0]).unwrap();
        let model = Model::from_params(dims, AttentionKind::Grc, params).unwrap();
        let out = model.decode(&encoded(3, 1), &DecodeOptions::greedy(4)).unwrap();
        assert_eq!(out.tokens.as_slice(), &[1, 1, 1, 1]);
        assert!(out.truncated);
    }

    #[test]
    fn greedy_ties_pick_smallest_id() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        let dims = small_dims();
        let mut params = ModelParams::zeros(&dims, false);
        params.out_b = Mat64::column(vec![-1.0, 0.0, 0.0, 0.0]).unwrap();
        let model = Model::from_params(dims, AttentionKind::Gsa, params).unwrap();
        let out = model.decode(&encoded(2, 2), &DecodeOptions::greedy(2)).unwrap();
        assert_eq!(out.tokens.as_slice(), &[1, 1]);
    }

    /// Best sequence by exhaustive search over every output of at most `len` tokens.
    fn brute_force(model: &Model, h: &EncodedSequence, len: usize) -> (Vec<usize>, f64) {
        let v = model.dims().vocab;
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for y in 0..v {
                    let mut seq = prefix.clone();
                    seq.push(y);
                    if y == EOS {
                        let lp = model.sequence_log_prob(h, &seq).unwrap();
                        if lp > best.1 {
                            best = (seq, lp);
                        }
                    } else {
                        next.push(seq);
                    }
                }
            }
            frontier = next;
        }
        best
    }

    #[test]
    fn greedy_is_exact_when_margins_are_wide() {
        let dims = ModelDims {
            vocab: 3,
            ..small_dims()
        };
        let mut checked = 0;
        for seed in 0..40 {
            let mut model = Model::new(dims, AttentionKind::Gsa, seed).unwrap();
            for x in model.params_mut().out_w.as_mut_slice() {
                *x *= 6.0;
            }
            let h = encoded(4, seed);
            let greedy = model.decode(&h, &DecodeOptions::greedy(3)).unwrap();
            let enc = model.keys_for(h.clone()).unwrap();
            let mut state = model.initial_state(h.len());
            let mut wide = !greedy.truncated;
            for &y in greedy.tokens.as_slice() {
                let out = model.step(&enc, &mut state).unwrap();
                let mut lp = out.log_probs.clone();
                lp.sort_by(|a, b| b.total_cmp(a));
                wide &= lp[0] - lp[1] > 2f64.ln();
                state.y_prev = y;
            }
            if !wide {
                continue;
            }
            checked += 1;
            let (seq, lp) = brute_force(&model, &h, 3);
            assert_eq!(seq, greedy.tokens.as_slice(), "seed {seed}");
            assert!((lp - greedy.log_prob).abs() < 1e-12);
        }
        assert!(checked > 0);
    }

    #[test]
    fn beam_never_scores_below_greedy() {
        for seed in 0..20 {
            let model = Model::new(small_dims(), AttentionKind::Grc, seed).unwrap();
            let h = encoded(5, seed + 100);
            let g = model.decode(&h, &DecodeOptions::greedy(6)).unwrap();
            let b = model
                .decode(&h, &DecodeOptions { beam: 4, max_len: 6, nu: None })
                .unwrap();
            if !g.truncated {
                assert!(b.log_prob >= g.log_prob);
            }
            let check = model.sequence_log_prob(&h, b.tokens.as_slice()).unwrap();
            assert!((check - b.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_needs_decgrc() {
        let model = Model::new(small_dims(), AttentionKind::Grc, 0).unwrap();
        let opts = DecodeOptions {
            beam: 1,
            max_len: 3,
            nu: Some(0.1),
        };
        assert!(model.decode(&encoded(2, 0), &opts).is_err());
    }
}
