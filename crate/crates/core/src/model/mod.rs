//! Desk-scale attention encoder-decoder: a lookahead recurrent encoder with
//! frame subsampling, a tanh-cell decoder, an affine+softmax readout and any
//! registered attention in between.

mod checkpoint;
mod decode;
mod tape;
mod train;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::score::glorot_fill;
use crate::attention::{EncodedSequence, FeedbackState, ScoreKeys, ScoreParams};
use crate::error::{check_len, Error, Result};
use crate::mechanism::{build_mechanism, Attended, AttentionKind, AttentionMechanism, InferCarry, StepInputs};
use crate::numerics::{axpy, logsumexp, matvec, softmax, Mat64};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub(crate) use decode::argmax;
pub use decode::{DecodeOptions, Decoded};
pub use tape::ParamVars;
pub use train::{epoch_mean, thread_pool, AdamConfig, IterationLoss, Trainer, THREADS_ENV};

/// End-of-sequence id. The decoder is also primed with it as its start token.
pub const EOS: usize = 0;

/// Token ids in `[0, V)`; training targets end with [`EOS`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&y| y >= vocab) {
            return Err(Error::Contract(format!("token {bad} outside vocabulary of {vocab}")));
        }
        Ok(Self(ids))
    }

    /// Content tokens followed by [`EOS`].
    pub fn target(content: &[usize], vocab: usize) -> Result<Self> {
        let mut ids = content.to_vec();
        ids.push(EOS);
        Self::new(ids, vocab)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens before the first [`EOS`].
    pub fn content(&self) -> &[usize] {
        let end = self.0.iter().position(|&y| y == EOS).unwrap_or(self.0.len());
        &self.0[..end]
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|y| y.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

/// One utterance: input frames `x` (`T_in x d_x`) and its target tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: usize,
    pub x: Mat64,
    pub y: TokenSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Input feature size.
    pub d_x: usize,
    /// Encoder state size.
    pub d_h: usize,
    /// Decoder state size.
    pub d_s: usize,
    /// Score hidden size.
    pub d_a: usize,
    /// Token embedding size.
    pub d_emb: usize,
    pub vocab: usize,
    /// Future input frames visible to each encoder step.
    pub lookahead: usize,
    /// Encoder subsampling stride.
    pub stride: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_x", self.d_x),
            ("d_h", self.d_h),
            ("d_s", self.d_s),
            ("d_a", self.d_a),
            ("d_emb", self.d_emb),
            ("stride", self.stride),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension {name} must be positive")));
        }
        if self.vocab < 2 {
            return Err(Error::Config("vocabulary needs at least two tokens".into()));
        }
        Ok(())
    }

    /// Width of one encoder input: the frame and its lookahead.
    pub fn encoder_input(&self) -> usize {
        self.d_x * (self.lookahead + 1)
    }

    /// Encoded length `ceil(T_in / stride)`.
    pub fn encoded_len(&self, frames_in: usize) -> usize {
        frames_in.div_ceil(self.stride)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub enc_wx: Mat64,
    pub enc_wh: Mat64,
    pub enc_b: Mat64,
    pub embed: Mat64,
    pub dec_ws: Mat64,
    /// Acts on `[embed(y); c]`.
    pub dec_win: Mat64,
    pub dec_b: Mat64,
    pub score: ScoreParams,
    /// Second score head, present only for attentions with a monotonic stage.
    pub mono: Option<ScoreParams>,
    /// Acts on `[s; embed(y); c]`.
    pub out_w: Mat64,
    pub out_b: Mat64,
}

impl ModelParams {
    pub fn zeros(dims: &ModelDims, monotonic: bool) -> Self {
        let ModelDims {
            d_h, d_s, d_a, d_emb, vocab, ..
        } = *dims;
        Self {
            enc_wx: Mat64::zeros(d_h, dims.encoder_input()),
            enc_wh: Mat64::zeros(d_h, d_h),
            enc_b: Mat64::zeros(d_h, 1),
            embed: Mat64::zeros(vocab, d_emb),
            dec_ws: Mat64::zeros(d_s, d_s),
            dec_win: Mat64::zeros(d_s, d_emb + d_h),
            dec_b: Mat64::zeros(d_s, 1),
            score: ScoreParams::zeros(d_s, d_h, d_a),
            mono: monotonic.then(|| ScoreParams::zeros(d_s, d_h, d_a)),
            out_w: Mat64::zeros(vocab, d_s + d_emb + d_h),
            out_b: Mat64::zeros(vocab, 1),
        }
    }

    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn init(dims: &ModelDims, monotonic: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims, monotonic);
        let (d_h, d_s) = (dims.d_h, dims.d_s);
        glorot_fill(&mut rng, &mut p.enc_wx, dims.encoder_input() + d_h, d_h);
        glorot_fill(&mut rng, &mut p.enc_wh, dims.encoder_input() + d_h, d_h);
        glorot_fill(&mut rng, &mut p.embed, dims.vocab, dims.d_emb);
        glorot_fill(&mut rng, &mut p.dec_ws, d_s + dims.d_emb + d_h, d_s);
        glorot_fill(&mut rng, &mut p.dec_win, d_s + dims.d_emb + d_h, d_s);
        p.score = ScoreParams::glorot(&mut rng, d_s, d_h, dims.d_a);
        if monotonic {
            p.mono = Some(ScoreParams::glorot(&mut rng, d_s, d_h, dims.d_a));
        }
        glorot_fill(&mut rng, &mut p.out_w, d_s + dims.d_emb + d_h, dims.vocab);
        p
    }

    /// Every tensor with a stable name, in checkpoint and flattening order.
    pub fn tensors(&self) -> Vec<(String, &Mat64)> {
        let mut out: Vec<(String, &Mat64)> = vec![
            ("enc.wx".into(), &self.enc_wx),
            ("enc.wh".into(), &self.enc_wh),
            ("enc.b".into(), &self.enc_b),
            ("embed".into(), &self.embed),
            ("dec.ws".into(), &self.dec_ws),
            ("dec.win".into(), &self.dec_win),
            ("dec.b".into(), &self.dec_b),
        ];
        out.extend(self.score.tensors().map(|(n, m)| (format!("score.{n}"), m)));
        if let Some(mono) = &self.mono {
            out.extend(mono.tensors().map(|(n, m)| (format!("mono.{n}"), m)));
        }
        out.push(("out.w".into(), &self.out_w));
        out.push(("out.b".into(), &self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat64)> {
        let mut out: Vec<(String, &mut Mat64)> = vec![
            ("enc.wx".into(), &mut self.enc_wx),
            ("enc.wh".into(), &mut self.enc_wh),
            ("enc.b".into(), &mut self.enc_b),
            ("embed".into(), &mut self.embed),
            ("dec.ws".into(), &mut self.dec_ws),
            ("dec.win".into(), &mut self.dec_win),
            ("dec.b".into(), &mut self.dec_b),
        ];
        out.extend(self.score.tensors_mut().map(|(n, m)| (format!("score.{n}"), m)));
        if let Some(mono) = &mut self.mono {
            out.extend(mono.tensors_mut().map(|(n, m)| (format!("mono.{n}"), m)));
        }
        out.push(("out.w".into(), &mut self.out_w));
        out.push(("out.b".into(), &mut self.out_b));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len());
        for (_, m) in self.tensors() {
            flat.extend_from_slice(m.as_slice());
        }
        flat
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        check_len("ModelParams::assign", self.len(), flat.len())?;
        let mut off = 0;
        for (_, m) in self.tensors_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_shapes(&self, dims: &ModelDims) -> Result<()> {
        let reference = Self::zeros(dims, self.mono.is_some());
        for ((name, a), (_, b)) in self.tensors().iter().zip(reference.tensors()) {
            if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
                return Err(Error::Config(format!(
                    "tensor {name} is {}x{}, dimensions require {}x{}",
                    a.rows(),
                    a.cols(),
                    b.rows(),
                    b.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Encoded frames with their precomputed score keys.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub h: EncodedSequence,
    pub keys: ScoreKeys,
    pub mono_keys: Option<ScoreKeys>,
}

/// Decoder state carried between output steps.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub s: Vec<f64>,
    pub y_prev: usize,
    pub c_prev: Vec<f64>,
    pub feedback: FeedbackState,
    pub carry: InferCarry,
}

/// Result of one decoder step before a token is chosen.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub attended: Attended,
}

pub struct Model {
    dims: ModelDims,
    kind: AttentionKind,
    params: ModelParams,
    mechanism: Box<dyn AttentionMechanism>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("dims", &self.dims)
            .field("kind", &self.kind)
            .field("params", &self.params.len())
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self::from_params(self.dims, self.kind, self.params.clone())
            .expect("a built model stays valid")
    }
}

impl Model {
    pub fn new(dims: ModelDims, kind: AttentionKind, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mechanism = build_mechanism(&kind)?;
        let params = ModelParams::init(&dims, mechanism.needs_monotonic_head(), seed);
        Ok(Self {
            dims,
            kind,
            params,
            mechanism,
        })
    }

    pub fn from_params(dims: ModelDims, kind: AttentionKind, params: ModelParams) -> Result<Self> {
        dims.validate()?;
        let mechanism = build_mechanism(&kind)?;
        if mechanism.needs_monotonic_head() != params.mono.is_some() {
            return Err(Error::Config(format!(
                "{kind} parameters {} a monotonic score head",
                if params.mono.is_some() { "must not carry" } else { "need" }
            )));
        }
        params.check_shapes(&dims)?;
        Ok(Self {
            dims,
            kind,
            params,
            mechanism,
        })
    }

    /// Swaps in another mechanism of the same parameter layout.
    pub fn with_mechanism(&self, mechanism: Box<dyn AttentionMechanism>) -> Result<Self> {
        if mechanism.needs_monotonic_head() != self.params.mono.is_some() {
            return Err(Error::Config("mechanism needs a different score layout".into()));
        }
        Ok(Self {
            dims: self.dims,
            kind: mechanism.kind(),
            params: self.params.clone(),
            mechanism,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn mechanism(&self) -> &dyn AttentionMechanism {
        self.mechanism.as_ref()
    }

    /// Lookahead input of frame `i`: frames `i..=i+L`, zero past the end.
    fn encoder_input(&self, x: &Mat64, i: usize) -> Vec<f64> {
        let d_x = self.dims.d_x;
        let mut xin = vec![0.0; self.dims.encoder_input()];
        for k in 0..=self.dims.lookahead {
            if i + k < x.rows() {
                xin[k * d_x..(k + 1) * d_x].copy_from_slice(x.row(i + k));
            }
        }
        xin
    }

    /// Runs the recurrent encoder and keeps the last state of every
    /// `stride`-frame block, so `h_t` sees inputs up to `t * stride + L`.
    pub fn encode(&self, x: &Mat64) -> Result<EncodedSequence> {
        if x.rows() == 0 {
            return Err(Error::Contract("encode needs at least one frame".into()));
        }
        check_len("encode", self.dims.d_x, x.cols())?;
        let p = &self.params;
        let stride = self.dims.stride;
        let mut state = vec![0.0; self.dims.d_h];
        let mut rows = Vec::with_capacity(self.dims.encoded_len(x.rows()));
        for i in 0..x.rows() {
            let xin = self.encoder_input(x, i);
            let mut pre = matvec(&p.enc_wx, &xin)?;
            let rec = matvec(&p.enc_wh, &state)?;
            for ((a, r), b) in pre.iter_mut().zip(&rec).zip(p.enc_b.as_slice()) {
                *a = (*a + r + b).tanh();
            }
            state = pre;
            if (i + 1) % stride == 0 || i + 1 == x.rows() {
                rows.push(state.clone());
            }
        }
        EncodedSequence::from_rows(&rows)
    }

    pub fn encode_with_keys(&self, x: &Mat64) -> Result<EncoderOutput> {
        let h = self.encode(x)?;
        self.keys_for(h)
    }

    pub fn keys_for(&self, h: EncodedSequence) -> Result<EncoderOutput> {
        check_len("keys_for", self.dims.d_h, h.dim())?;
        let keys = ScoreKeys::new(&self.params.score, &h)?;
        let mono_keys = match &self.params.mono {
            Some(m) => Some(ScoreKeys::new(m, &h)?),
            None => None,
        };
        Ok(EncoderOutput { h, keys, mono_keys })
    }

    fn embedding(&self, y: usize) -> Result<&[f64]> {
        if y >= self.dims.vocab {
            return Err(Error::Contract(format!(
                "token {y} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(self.params.embed.row(y))
    }

    /// `s_u = tanh(W_s s_{u-1} + W_in [embed(y_{u-1}); c_{u-1}] + b)`.
    pub fn decoder_step(&self, s_prev: &[f64], y_prev: usize, c_prev: &[f64]) -> Result<Vec<f64>> {
        let p = &self.params;
        let input = [self.embedding(y_prev)?, c_prev].concat();
        let mut s = matvec(&p.dec_ws, s_prev)?;
        let inp = matvec(&p.dec_win, &input)?;
        axpy(1.0, &inp, &mut s);
        for (a, b) in s.iter_mut().zip(p.dec_b.as_slice()) {
            *a = (*a + b).tanh();
        }
        Ok(s)
    }

    pub fn readout_logits(&self, s: &[f64], y_prev: usize, c: &[f64]) -> Result<Vec<f64>> {
        let p = &self.params;
        let input = [s, self.embedding(y_prev)?, c].concat();
        let mut logits = matvec(&p.out_w, &input)?;
        axpy(1.0, p.out_b.as_slice(), &mut logits);
        Ok(logits)
    }

    /// Output distribution `softmax(W_o [s_u; embed(y_{u-1}); c_u] + b_o)`.
    pub fn readout(&self, s: &[f64], y_prev: usize, c: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.readout_logits(s, y_prev, c)?))
    }

    pub fn log_readout(&self, s: &[f64], y_prev: usize, c: &[f64]) -> Result<Vec<f64>> {
        let logits = self.readout_logits(s, y_prev, c)?;
        let lse = logsumexp(&logits);
        Ok(logits.iter().map(|l| l - lse).collect())
    }

    pub fn initial_state(&self, frames: usize) -> DecoderState {
        DecoderState {
            s: vec![0.0; self.dims.d_s],
            y_prev: EOS,
            c_prev: vec![0.0; self.dims.d_h],
            feedback: FeedbackState::new(frames),
            carry: InferCarry::default(),
        }
    }

    /// Advances the decoder by one output step: new state, attention over
    /// every frame, then the readout. The caller picks the token and sets
    /// `state.y_prev`.
    pub fn step(&self, enc: &EncoderOutput, state: &mut DecoderState) -> Result<StepOutput> {
        let s = self.decoder_step(&state.s, state.y_prev, &state.c_prev)?;
        let scores = enc.keys.score_row(&self.params.score, &s, &state.feedback)?;
        let mono = match (&self.params.mono, &enc.mono_keys) {
            (Some(p), Some(k)) => Some(k.score_row(p, &s, &state.feedback)?),
            _ => None,
        };
        let attended = self.mechanism.attend(
            &StepInputs {
                h: &enc.h,
                scores: &scores,
                mono: mono.as_ref(),
            },
            &mut state.carry,
        )?;
        state.feedback.accumulate(&attended.weights);
        let log_probs = self.log_readout(&s, state.y_prev, &attended.context)?;
        state.s = s;
        state.c_prev.clone_from(&attended.context);
        Ok(StepOutput {
            log_probs,
            attended,
        })
    }

    /// Teacher-forced pass over a reference: per-step attention and the
    /// mean cross-entropy per token.
    pub fn teacher_forced(&self, x: &Mat64, y: &TokenSequence) -> Result<(Vec<Attended>, f64)> {
        let enc = self.encode_with_keys(x)?;
        let mut state = self.initial_state(enc.h.len());
        let mut trace = Vec::with_capacity(y.len());
        let mut ce = 0.0;
        for &target in y.as_slice() {
            let out = self.step(&enc, &mut state)?;
            ce -= out.log_probs[target];
            trace.push(out.attended);
            state.y_prev = target;
        }
        Ok((trace, ce / y.len() as f64))
    }

    /// Mean cross-entropy per token over a dataset, without gradients.
    pub fn mean_loss(&self, data: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0;
        for ex in data {
            let (_, ce) = self.teacher_forced(&ex.x, &ex.y)?;
            total += ce * ex.y.len() as f64;
            tokens += ex.y.len();
        }
        if tokens == 0 {
            return Err(Error::Contract("loss over an empty dataset".into()));
        }
        Ok(total / tokens as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn small_dims() -> ModelDims {
        ModelDims {
            d_x: 3,
            d_h: 4,
            d_s: 4,
            d_a: 3,
            d_emb: 2,
            vocab: 4,
            lookahead: 1,
            stride: 2,
        }
    }

    fn random_x(rows: usize, cols: usize, seed: u64) -> Mat64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mat64::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let dims = ModelDims {
            lookahead: 0,
            stride: 1,
            ..small_dims()
        };
        let mut params = ModelParams::zeros(&dims, false);
        params.enc_b = Mat64::column(vec![0.5, -0.5, 0.0, 1.0]).unwrap();
        let model = Model::from_params(dims, AttentionKind::Gsa, params).unwrap();
        let h = model.encode(&random_x(3, 3, 1)).unwrap();
        for t in 0..3 {
            assert_eq!(h.frame(t), &[0.5f64.tanh(), (-0.5f64).tanh(), 0.0, 1.0f64.tanh()]);
        }
    }

    #[test]
    fn encoded_length_is_ceiling() {
        let model = Model::new(small_dims(), AttentionKind::Gsa, 0).unwrap();
        assert_eq!(model.encode(&random_x(10, 3, 2)).unwrap().len(), 5);
        assert_eq!(model.encode(&random_x(9, 3, 2)).unwrap().len(), 5);
        assert_eq!(model.encode(&random_x(1, 3, 2)).unwrap().len(), 1);
    }

    #[test]
    fn encoder_ignores_frames_past_receptive_field() {
        let dims = small_dims();
        let model = Model::new(dims, AttentionKind::Gsa, 3).unwrap();
        let x = random_x(12, 3, 4);
        let h = model.encode(&x).unwrap();
        for t in 1..=h.len() {
            let horizon = t * dims.stride + dims.lookahead;
            if horizon >= x.rows() {
                continue;
            }
            let mut y = x.clone();
            for i in horizon..x.rows() {
                for j in 0..3 {
                    y.set(i, j, y.get(i, j) + 3.0);
                }
            }
            let h2 = model.encode(&y).unwrap();
            assert_eq!(h.frame(t - 1), h2.frame(t - 1), "frame {t}");
            assert_ne!(h.frame(h.len() - 1), h2.frame(h.len() - 1));
        }
    }

    #[test]
    fn zero_decoder_stays_at_zero() {
        let dims = small_dims();
        let model = Model::from_params(dims, AttentionKind::Grc, ModelParams::zeros(&dims, false)).unwrap();
        let s = model.decoder_step(&[0.3; 4], 2, &[1.0; 4]).unwrap();
        assert_eq!(s, vec![0.0; 4]);
        assert!(model.decoder_step(&[0.0; 4], 4, &[0.0; 4]).is_err());
    }

    #[test]
    fn contractive_decoder_reaches_fixed_point() {
        let dims = small_dims();
        let mut model = Model::new(dims, AttentionKind::Gsa, 5).unwrap();
        let p = model.params_mut();
        for m in [&mut p.dec_ws, &mut p.dec_win] {
            for x in m.as_mut_slice() {
                *x *= 0.1;
            }
        }
        p.dec_b = Mat64::column(vec![0.2, -0.1, 0.3, 0.0]).unwrap();
        let c = [0.5, -0.5, 0.25, 1.0];
        let mut s = vec![0.0; 4];
        for _ in 0..200 {
            s = model.decoder_step(&s, 1, &c).unwrap();
        }
        let next = model.decoder_step(&s, 1, &c).unwrap();
        assert!(crate::numerics::max_abs_diff(&s, &next) < 1e-9);
    }

    #[test]
    fn relabeled_embeddings_give_same_state() {
        let dims = small_dims();
        let model = Model::new(dims, AttentionKind::Gsa, 6).unwrap();
        let perm = [2, 0, 3, 1];
        let mut permuted = model.clone();
        for (old, &new) in perm.iter().enumerate() {
            let row = model.params().embed.row(old).to_vec();
            permuted.params_mut().embed.row_mut(new).copy_from_slice(&row);
        }
        let s = [0.1, 0.2, -0.3, 0.4];
        let c = [0.0, 1.0, 0.5, -1.0];
        for (y, &mapped) in perm.iter().enumerate() {
            assert_eq!(
                model.decoder_step(&s, y, &c).unwrap(),
                permuted.decoder_step(&s, mapped, &c).unwrap()
            );
        }
    }

    #[test]
    fn readout_examples() {
        let dims = ModelDims {
            vocab: 2,
            ..small_dims()
        };
        let mut params = ModelParams::zeros(&dims, false);
        let model = Model::from_params(dims, AttentionKind::Gsa, params.clone()).unwrap();
        assert_eq!(model.readout(&[0.0; 4], 0, &[0.0; 4]).unwrap(), vec![0.5, 0.5]);

        params.out_b = Mat64::column(vec![3f64.ln(), 0.0]).unwrap();
        let model = Model::from_params(dims, AttentionKind::Gsa, params.clone()).unwrap();
        let p = model.readout(&[0.0; 4], 0, &[0.0; 4]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);

        params.out_b = Mat64::column(vec![3f64.ln() + 7.0, 7.0]).unwrap();
        let shifted = Model::from_params(dims, AttentionKind::Gsa, params).unwrap();
        let q = shifted.readout(&[0.0; 4], 0, &[0.0; 4]).unwrap();
        assert!(crate::numerics::max_abs_diff(&p, &q) < 1e-15);
    }

    #[test]
    fn readout_is_a_distribution() {
        let model = Model::new(small_dims(), AttentionKind::Gsa, 7).unwrap();
        let p = model.readout(&[0.9, -0.2, 0.3, 0.1], 3, &[1.0, 2.0, -1.0, 0.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trips() {
        let mut model = Model::new(small_dims(), AttentionKind::Mocha { w: 2 }, 8).unwrap();
        let flat = model.params().flatten();
        assert_eq!(flat.len(), model.params().len());
        let before = model.params().clone();
        model.params_mut().assign(&flat).unwrap();
        assert_eq!(model.params(), &before);
        assert!(model.params_mut().assign(&flat[1..]).is_err());
    }

    #[test]
    fn monotonic_head_must_match_kind() {
        let dims = small_dims();
        assert!(Model::from_params(dims, AttentionKind::Mocha { w: 2 }, ModelParams::zeros(&dims, false)).is_err());
        assert!(Model::from_params(dims, AttentionKind::Grc, ModelParams::zeros(&dims, true)).is_err());
    }

    #[test]
    fn token_sequence_rules() {
        assert!(TokenSequence::new(vec![], 4).is_err());
        assert!(TokenSequence::new(vec![4], 4).is_err());
        let y = TokenSequence::target(&[3, 1], 4).unwrap();
        assert_eq!(y.as_slice(), &[3, 1, EOS]);
        assert_eq!(y.content(), &[3, 1]);
    }
}
