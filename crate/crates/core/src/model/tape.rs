//! Teacher-forced cross-entropy recorded on the tape.

use crate::attention::score::TapeScore;
use crate::error::{Error, Result};
use crate::mechanism::{TapeCarry, TapeStepInputs};
use crate::numerics::{Mat64, Tape, Var};

use super::{Example, Model, ModelParams};

/// Tape variables for every model tensor, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    monotonic: bool,
}

struct ScoreVars {
    w_s: Var,
    w_h: Var,
    w_beta: Var,
    eta: Var,
    v: Var,
    v_beta: Var,
    b: Var,
}

impl ParamVars {
    /// One leaf per tensor.
    pub fn leaves(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.tensors().iter().map(|(_, m)| tape.matrix(m)).collect();
        Self {
            vars,
            monotonic: params.mono.is_some(),
        }
    }

    /// Views into one flat parameter vector, laid out like [`ModelParams::flatten`].
    pub fn from_flat(tape: &mut Tape, flat: Var, layout: &ModelParams) -> Result<Self> {
        if tape.value(flat).len() != layout.len() {
            return Err(Error::Shape {
                op: "ParamVars::from_flat",
                expected: layout.len(),
                got: tape.value(flat).len(),
            });
        }
        let mut off = 0;
        let mut vars = Vec::new();
        for (_, m) in layout.tensors() {
            let n = m.as_slice().len();
            let s = tape.slice(flat, off, n);
            vars.push(tape.reshape(s, m.rows(), m.cols()));
            off += n;
        }
        Ok(Self {
            vars,
            monotonic: layout.mono.is_some(),
        })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn score(&self, offset: usize) -> ScoreVars {
        let v = &self.vars[offset..offset + 7];
        ScoreVars {
            w_s: v[0],
            w_h: v[1],
            w_beta: v[2],
            eta: v[3],
            v: v[4],
            v_beta: v[5],
            b: v[6],
        }
    }

    fn mono(&self) -> Option<ScoreVars> {
        self.monotonic.then(|| self.score(14))
    }

    fn out(&self) -> (Var, Var) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }
}

fn tape_score(tape: &mut Tape, h: Var, s: &ScoreVars) -> TapeScore {
    TapeScore::new(tape, h, s.w_s, s.w_h, s.w_beta, s.eta, s.v, s.v_beta, s.b)
}

impl Model {
    fn tape_encode(&self, tape: &mut Tape, pv: &ParamVars, x: &Mat64) -> Result<Var> {
        let [wx, wh, b] = [pv.vars[0], pv.vars[1], pv.vars[2]];
        let mut state = tape.vector(vec![0.0; self.dims.d_h]);
        let mut rows = Vec::new();
        for i in 0..x.rows() {
            let xin = tape.vector(self.encoder_input(x, i));
            let a = tape.matvec(wx, xin);
            let r = tape.matvec(wh, state);
            let pre = tape.add(a, r);
            let pre = tape.add(pre, b);
            state = tape.tanh(pre);
            if (i + 1) % self.dims.stride == 0 || i + 1 == x.rows() {
                rows.push(state);
            }
        }
        Ok(tape.stack(&rows))
    }

    /// Sum of token cross-entropies for one example. Gated attentions read
    /// the context after the last frame; no endpoint is involved in training.
    pub fn tape_loss_sum(&self, tape: &mut Tape, pv: &ParamVars, ex: &Example) -> Result<Var> {
        if ex.x.rows() == 0 {
            return Err(Error::Contract("encode needs at least one frame".into()));
        }
        let h = self.tape_encode(tape, pv, &ex.x)?;
        let frames = tape.shape(h).0;
        let [embed, ws, win, db] = [pv.vars[3], pv.vars[4], pv.vars[5], pv.vars[6]];
        let main = tape_score(tape, h, &pv.score(7));
        let mono = pv.mono().map(|m| tape_score(tape, h, &m));
        let (out_w, out_b) = pv.out();

        let mut s = tape.vector(vec![0.0; self.dims.d_s]);
        let mut c = tape.vector(vec![0.0; self.dims.d_h]);
        let mut cum = tape.vector(vec![0.0; frames]);
        let mut y_prev = super::EOS;
        let mut carry = TapeCarry::default();
        let mut terms = Vec::with_capacity(ex.y.len());
        for &target in ex.y.as_slice() {
            if target >= self.dims.vocab || y_prev >= self.dims.vocab {
                return Err(Error::Contract(format!("token {target} outside vocabulary")));
            }
            let emb = tape.row(embed, y_prev);
            let input = tape.concat(&[emb, c]);
            let a = tape.matvec(ws, s);
            let b = tape.matvec(win, input);
            let pre = tape.add(a, b);
            let pre = tape.add(pre, db);
            s = tape.tanh(pre);

            let scores = main.scores(tape, s, cum);
            let mono_in = mono.as_ref().map(|m| (m.scores(tape, s, cum), m.b));
            let att = self.mechanism.attend_tape(
                tape,
                &TapeStepInputs {
                    h,
                    frames,
                    scores,
                    bias: main.b,
                    mono: mono_in,
                },
                &mut carry,
            )?;
            c = att.context;
            cum = tape.add(cum, att.weights);

            let feat = tape.concat(&[s, emb, c]);
            let logits = tape.matvec(out_w, feat);
            let logits = tape.add(logits, out_b);
            terms.push(tape.neg_log_softmax(logits, target));
            y_prev = target;
        }
        let all = tape.concat(&terms);
        Ok(tape.sum(all))
    }

    /// Mean cross-entropy per token.
    pub fn tape_loss(&self, tape: &mut Tape, pv: &ParamVars, ex: &Example) -> Result<Var> {
        let total = self.tape_loss_sum(tape, pv, ex)?;
        Ok(tape.scale(total, 1.0 / ex.y.len() as f64))
    }

    /// Loss sum and its gradient with respect to the flattened parameters.
    pub fn loss_and_grad(&self, ex: &Example) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let pv = ParamVars::leaves(&mut tape, &self.params);
        let loss = self.tape_loss_sum(&mut tape, &pv, ex)?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of example {}", ex.id)));
        }
        let grads = tape.backward(loss);
        let mut flat = Vec::with_capacity(self.params.len());
        for &v in pv.vars() {
            flat.extend(grads.wrt(&tape, v));
        }
        Ok((value, flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::AttentionKind;
    use crate::model::tests::small_dims;
    use crate::model::TokenSequence;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_example(seed: u64) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..7 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Example {
            id: 0,
            x: Mat64::from_vec(7, 3, data).unwrap(),
            y: TokenSequence::target(&[2, 1], 4).unwrap(),
        }
    }

    #[test]
    fn tape_loss_matches_plain_forward() {
        let ex = toy_example(1);
        for kind in AttentionKind::all_builtin(2) {
            let model = Model::new(small_dims(), kind, 11).unwrap();
            let mut tape = Tape::new();
            let pv = ParamVars::leaves(&mut tape, model.params());
            let loss = model.tape_loss(&mut tape, &pv, &ex).unwrap();
            let (_, plain) = model.teacher_forced(&ex.x, &ex.y).unwrap();
            let diff = (tape.scalar_value(loss) - plain).abs();
            // MoChA trains on expected alignments and decodes with hard endpoints.
            if !matches!(kind, AttentionKind::Mocha { .. }) {
                assert!(diff < 1e-12, "{kind}: {diff}");
            }
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let ex = toy_example(2);
        for kind in AttentionKind::all_builtin(2) {
            let model = Model::new(small_dims(), kind, 12).unwrap();
            let layout = model.params().clone();
            let err = grad_check(
                |tape, flat| {
                    let pv = ParamVars::from_flat(tape, flat, &layout)?;
                    model.tape_loss(tape, &pv, &ex)
                },
                &layout.flatten(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn leaf_gradients_equal_flat_gradients() {
        let ex = toy_example(3);
        let model = Model::new(small_dims(), AttentionKind::DecGrc, 13).unwrap();
        let (_, g) = model.loss_and_grad(&ex).unwrap();
        let mut tape = Tape::new();
        let flat = tape.vector(model.params().flatten());
        let pv = ParamVars::from_flat(&mut tape, flat, model.params()).unwrap();
        let loss = model.tape_loss_sum(&mut tape, &pv, &ex).unwrap();
        let g2 = tape.backward(loss).wrt(&tape, flat);
        assert!(crate::numerics::max_abs_diff(&g, &g2) < 1e-12);
    }
}
