//! Threshold-based online DecGRC decoding over encoded frames that arrive one
//! at a time.
//!
//! Each output step restarts its scan at frame 1 and stops at the first frame
//! whose gate falls below `ν`; the context at that frame is used as `c_u`.
//! Endpoints may move backwards between steps, so every received frame is
//! kept for the life of the session.

use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::attention::grc::{decgrc_gate_from_lse, dual_weights_raw, recurse_step};
use crate::attention::score::FrameKey;
use crate::attention::{EncodedSequence, FeedbackState};
use crate::error::{Error, Result};
use crate::mechanism::{Attended, AttentionKind};
use crate::model::{Decoded, Model, TokenSequence, EOS};
use crate::numerics::LogSumExpAcc;

/// One message of the frame protocol. Indices are one-based and consecutive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FrameRecord {
    Frame { index: usize, h: Vec<f64> },
    End,
}

pub trait FrameSupplier {
    /// Blocks until the next record is available.
    fn next_record(&mut self) -> Result<FrameRecord>;
}

/// Replays an already encoded utterance.
#[derive(Clone, Debug)]
pub struct InMemorySupplier {
    h: EncodedSequence,
    next: usize,
}

impl InMemorySupplier {
    pub fn new(h: EncodedSequence) -> Self {
        Self { h, next: 0 }
    }

    pub fn records(h: &EncodedSequence) -> impl Iterator<Item = FrameRecord> + '_ {
        (0..h.len())
            .map(|t| FrameRecord::Frame {
                index: t + 1,
                h: h.frame(t).to_vec(),
            })
            .chain(std::iter::once(FrameRecord::End))
    }
}

impl FrameSupplier for InMemorySupplier {
    fn next_record(&mut self) -> Result<FrameRecord> {
        if self.next >= self.h.len() {
            return Ok(FrameRecord::End);
        }
        self.next += 1;
        Ok(FrameRecord::Frame {
            index: self.next,
            h: self.h.frame(self.next - 1).to_vec(),
        })
    }
}

/// Receives records from a producer thread, giving up after `patience`.
#[derive(Debug)]
pub struct ChannelSupplier {
    rx: Receiver<FrameRecord>,
    patience: Duration,
}

impl ChannelSupplier {
    pub fn new(rx: Receiver<FrameRecord>, patience: Duration) -> Self {
        Self { rx, patience }
    }
}

impl FrameSupplier for ChannelSupplier {
    fn next_record(&mut self) -> Result<FrameRecord> {
        match self.rx.recv_timeout(self.patience) {
            Ok(r) => Ok(r),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.patience)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Contract("frame producer hung up without an end marker".into()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointRecord {
    /// One-based output step.
    pub u: usize,
    /// One-based frame count the context was read at.
    pub t_end: usize,
    /// Gate at `t_end`; below `ν` whenever the scan stopped early.
    pub gate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointLog {
    pub records: Vec<EndpointRecord>,
}

impl EndpointLog {
    pub fn total_frames(&self) -> usize {
        self.records.iter().map(|r| r.t_end).sum()
    }

    pub fn endpoints(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.t_end).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// Share of the full `T x U` scan actually performed: `Σ_u t_end(u) / (T U)`.
pub fn endpoint_fraction(log: &EndpointLog, frames: usize, steps: usize) -> Result<f64> {
    if frames == 0 || steps == 0 {
        return Err(Error::Contract("endpoint fraction over an empty grid".into()));
    }
    Ok(log.total_frames() as f64 / (frames * steps) as f64)
}

/// State of one online decoding pass.
#[derive(Clone, Debug)]
pub struct StreamSession {
    nu: f64,
    max_len: usize,
    frames: Vec<Vec<f64>>,
    keys: Vec<FrameKey>,
    ended: bool,
    consumed: usize,
    feedback: FeedbackState,
    log: EndpointLog,
}

impl StreamSession {
    pub fn new(nu: f64, max_len: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(Error::Config(format!("threshold {nu} outside [0, 1]")));
        }
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(Self {
            nu,
            max_len,
            frames: Vec::new(),
            keys: Vec::new(),
            ended: false,
            consumed: 0,
            feedback: FeedbackState::new(0),
            log: EndpointLog::default(),
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Frames received from the supplier so far.
    pub fn frames_supplied(&self) -> usize {
        self.frames.len()
    }

    /// Largest frame count any scan has read.
    pub fn frames_consumed(&self) -> usize {
        self.consumed
    }

    pub fn log(&self) -> &EndpointLog {
        &self.log
    }

    /// Makes zero-based frame `t` available; false once the utterance has ended before it.
    fn ensure(&mut self, model: &Model, supplier: &mut dyn FrameSupplier, t: usize) -> Result<bool> {
        while self.frames.len() <= t {
            if self.ended {
                return Ok(false);
            }
            match supplier.next_record()? {
                FrameRecord::End => self.ended = true,
                FrameRecord::Frame { index, h } => {
                    if index != self.frames.len() + 1 {
                        return Err(Error::Contract(format!(
                            "frame {index} arrived, expected {}",
                            self.frames.len() + 1
                        )));
                    }
                    self.keys.push(model.params().score.key(&h)?);
                    self.frames.push(h);
                }
            }
        }
        self.consumed = self.consumed.max(t + 1);
        Ok(true)
    }
}

/// Tokens, endpoints and per-step attention of one online pass.
#[derive(Clone, Debug)]
pub struct StreamOutput {
    pub decoded: Decoded,
    pub log: EndpointLog,
}

/// Greedy online decoding with a DecGRC model. With `ν = 0` the scan never
/// stops early and the output equals offline decoding.
pub fn stream_decode(
    model: &Model,
    supplier: &mut dyn FrameSupplier,
    session: &mut StreamSession,
) -> Result<StreamOutput> {
    if model.kind() != AttentionKind::DecGrc {
        return Err(Error::Config(format!(
            "online decoding needs decgrc attention, model uses {}",
            model.kind()
        )));
    }
    let score = &model.params().score;
    let bias = score.bias();
    let mut s = vec![0.0; model.dims().d_s];
    let mut c = vec![0.0; model.dims().d_h];
    let mut y_prev = EOS;
    let mut tokens = Vec::new();
    let mut trace = Vec::new();
    let mut log_prob = 0.0;

    while tokens.len() < session.max_len {
        let u = tokens.len() + 1;
        s = model.decoder_step(&s, y_prev, &c)?;
        let q = score.query(&s)?;
        if !session.ensure(model, supplier, 0)? {
            return Err(Error::Contract("utterance ended before any frame".into()));
        }

        let mut acc = LogSumExpAcc::new();
        acc.push(score.score_parts(&q, &session.keys[0], session.feedback.at(0)) + bias);
        let mut d = session.frames[0].clone();
        let mut z = vec![1.0];
        let mut t = 1;
        while session.ensure(model, supplier, t)? {
            let e = score.score_parts(&q, &session.keys[t], session.feedback.at(t));
            acc.push(e + bias);
            let zt = decgrc_gate_from_lse(acc.value());
            recurse_step(&mut d, zt, &session.frames[t]);
            z.push(zt);
            if zt < session.nu {
                break;
            }
            t += 1;
        }
        let t_end = z.len();
        session.log.records.push(EndpointRecord {
            u,
            t_end,
            gate: z[t_end - 1],
        });
        let weights = dual_weights_raw(&z);
        session.feedback.accumulate(&weights);

        let lp = model.log_readout(&s, y_prev, &d)?;
        let y = crate::model::argmax(&lp);
        log_prob += lp[y];
        tokens.push(y);
        trace.push(Attended {
            context: d.clone(),
            weights,
            gates: Some(z),
            endpoint: Some(t_end),
        });
        c = d;
        y_prev = y;
        if y == EOS {
            break;
        }
    }

    let seen = session.frames.len();
    for step in &mut trace {
        step.weights.resize(seen, 0.0);
    }
    let truncated = tokens.last() != Some(&EOS);
    Ok(StreamOutput {
        decoded: Decoded {
            tokens: TokenSequence::new(tokens, model.dims().vocab)?,
            truncated,
            log_prob,
            trace,
        },
        log: session.log.clone(),
    })
}

/// Online decoding of a fully available utterance.
pub fn stream_decode_encoded(model: &Model, h: &EncodedSequence, nu: f64, max_len: usize) -> Result<StreamOutput> {
    let mut session = StreamSession::new(nu, max_len)?;
    stream_decode(model, &mut InMemorySupplier::new(h.clone()), &mut session)
}
