//! Attention variants behind one trait, registered by name and chosen at
//! runtime from the run configuration.
//!
//! Every mechanism has two forms: a plain `f64` step used for decoding, and a
//! tape step used for teacher-forced training. Both consume the same score
//! rows produced by the decoder.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::grc::{
    decgrc_gates, dual_weights, grc_gates, grc_recurse, tape_decgrc_gates, tape_dual_weights,
    tape_grc_gates, tape_grc_recurse,
};
use crate::attention::{gsa_context, softmax_weights, EncodedSequence, ScoreRow};
use crate::baselines::mocha::{first_step_prior, tape_mocha};
use crate::baselines::{mocha_infer, window_start, windowed_attend, MonotonicState, WindowSpec};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Which attention an encoder-decoder uses. Only the window-based variants
/// take a hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "KindSpec", into = "KindSpec")]
pub enum AttentionKind {
    Gsa,
    Grc,
    DecGrc,
    Windowed { w: usize },
    Mocha { w: usize },
}

/// Wire form `{"kind": name, "w": n}`; `w` is required exactly for the window variants.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KindSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
}

impl TryFrom<KindSpec> for AttentionKind {
    type Error = String;

    fn try_from(spec: KindSpec) -> std::result::Result<Self, String> {
        let kind = match (spec.kind.as_str(), spec.w) {
            ("gsa", None) => Self::Gsa,
            ("grc", None) => Self::Grc,
            ("decgrc", None) => Self::DecGrc,
            ("windowed", Some(w)) => Self::Windowed { w },
            ("mocha", Some(w)) => Self::Mocha { w },
            ("gsa" | "grc" | "decgrc", Some(_)) => {
                return Err(format!("attention {:?} takes no hyperparameter w", spec.kind))
            }
            ("windowed" | "mocha", None) => {
                return Err(format!("attention {:?} needs a window length w", spec.kind))
            }
            (other, _) => return Err(format!("unknown attention kind {other:?}")),
        };
        Ok(kind)
    }
}

impl From<AttentionKind> for KindSpec {
    fn from(k: AttentionKind) -> Self {
        let w = match k {
            AttentionKind::Windowed { w } | AttentionKind::Mocha { w } => Some(w),
            _ => None,
        };
        Self {
            kind: k.name().to_string(),
            w,
        }
    }
}

impl AttentionKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gsa => "gsa",
            Self::Grc => "grc",
            Self::DecGrc => "decgrc",
            Self::Windowed { .. } => "windowed",
            Self::Mocha { .. } => "mocha",
        }
    }

    pub fn all_builtin(w: usize) -> [AttentionKind; 5] {
        [
            Self::Gsa,
            Self::Grc,
            Self::DecGrc,
            Self::Windowed { w },
            Self::Mocha { w },
        ]
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Windowed { w } | Self::Mocha { w } => write!(f, "{}(w={w})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Score rows available to a mechanism at one decoder step.
#[derive(Debug)]
pub struct StepInputs<'a> {
    pub h: &'a EncodedSequence,
    /// Main score head; `bias` carries the gate bias `b`.
    pub scores: &'a ScoreRow,
    /// Monotonic score head (MoChA only).
    pub mono: Option<&'a ScoreRow>,
}

/// Per-utterance state a mechanism threads across decoder steps.
#[derive(Clone, Debug, Default)]
pub struct InferCarry {
    pub prev_weights: Option<Vec<f64>>,
    pub monotonic: Option<MonotonicState>,
}

/// Output of one plain attention step.
#[derive(Clone, Debug, PartialEq)]
pub struct Attended {
    pub context: Vec<f64>,
    /// Weights fed back to the score and shown in attention plots: softmax
    /// weights, dual weights for the gated variants, chunk weights for MoChA.
    pub weights: Vec<f64>,
    pub gates: Option<Vec<f64>>,
    /// One-based frame count the context depended on, when the mechanism decides one.
    pub endpoint: Option<usize>,
}

/// Tape-side inputs for one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct TapeStepInputs {
    /// `T x d_h` encoded frames.
    pub h: Var,
    pub frames: usize,
    /// Main head scores without the bias.
    pub scores: Var,
    pub bias: Var,
    /// Monotonic head `(scores, bias)`.
    pub mono: Option<(Var, Var)>,
}

#[derive(Clone, Debug, Default)]
pub struct TapeCarry {
    pub prev: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct TapeAttended {
    pub context: Var,
    pub weights: Var,
}

pub trait AttentionMechanism: Send + Sync + fmt::Debug {
    fn kind(&self) -> AttentionKind;

    /// Whether the model needs a separate monotonic score head.
    fn needs_monotonic_head(&self) -> bool {
        false
    }

    fn attend(&self, inputs: &StepInputs<'_>, carry: &mut InferCarry) -> Result<Attended>;

    fn attend_tape(
        &self,
        tape: &mut Tape,
        inputs: &TapeStepInputs,
        carry: &mut TapeCarry,
    ) -> Result<TapeAttended>;
}

#[derive(Debug)]
struct GlobalSoft;

impl AttentionMechanism for GlobalSoft {
    fn kind(&self) -> AttentionKind {
        AttentionKind::Gsa
    }

    fn attend(&self, inputs: &StepInputs<'_>, _: &mut InferCarry) -> Result<Attended> {
        let alpha = softmax_weights(inputs.scores)?;
        Ok(Attended {
            context: gsa_context(&alpha, inputs.h)?,
            weights: alpha.into_vec(),
            gates: None,
            endpoint: None,
        })
    }

    fn attend_tape(&self, tape: &mut Tape, i: &TapeStepInputs, _: &mut TapeCarry) -> Result<TapeAttended> {
        let alpha = tape.softmax(i.scores);
        let context = tape.matvec_t(i.h, alpha);
        Ok(TapeAttended {
            context,
            weights: alpha,
        })
    }
}

#[derive(Debug)]
struct GatedRecurrent {
    decreasing: bool,
}

impl AttentionMechanism for GatedRecurrent {
    fn kind(&self) -> AttentionKind {
        if self.decreasing {
            AttentionKind::DecGrc
        } else {
            AttentionKind::Grc
        }
    }

    fn attend(&self, inputs: &StepInputs<'_>, _: &mut InferCarry) -> Result<Attended> {
        let z = if self.decreasing {
            decgrc_gates(inputs.scores)?
        } else {
            grc_gates(inputs.scores)?
        };
        let trace = grc_recurse(inputs.h, &z)?;
        Ok(Attended {
            context: trace.final_context,
            weights: dual_weights(&z).into_vec(),
            gates: Some(z.into_vec()),
            endpoint: Some(inputs.h.len()),
        })
    }

    // Training always runs the recursion to the last frame.
    fn attend_tape(&self, tape: &mut Tape, i: &TapeStepInputs, _: &mut TapeCarry) -> Result<TapeAttended> {
        let e = tape.add_scalar(i.scores, i.bias);
        let z = if self.decreasing {
            tape_decgrc_gates(tape, e)
        } else {
            tape_grc_gates(tape, e)
        };
        let context = tape_grc_recurse(tape, i.h, z);
        let weights = tape_dual_weights(tape, z);
        Ok(TapeAttended { context, weights })
    }
}

#[derive(Debug)]
struct Windowed {
    w: usize,
}

impl Windowed {
    fn start(prev: Option<&[f64]>) -> usize {
        prev.map_or(1, window_start)
    }
}

impl AttentionMechanism for Windowed {
    fn kind(&self) -> AttentionKind {
        AttentionKind::Windowed { w: self.w }
    }

    fn attend(&self, inputs: &StepInputs<'_>, carry: &mut InferCarry) -> Result<Attended> {
        let spec = WindowSpec::new(Self::start(carry.prev_weights.as_deref()), self.w)?;
        let range = spec.range(inputs.h.len())?;
        let end = range.end;
        let (context, alpha) = windowed_attend(&inputs.scores.e[range], inputs.h, spec)?;
        let weights = alpha.into_vec();
        carry.prev_weights = Some(weights.clone());
        Ok(Attended {
            context,
            weights,
            gates: None,
            endpoint: Some(end),
        })
    }

    fn attend_tape(&self, tape: &mut Tape, i: &TapeStepInputs, carry: &mut TapeCarry) -> Result<TapeAttended> {
        let start = Self::start(carry.prev.map(|v| tape.value(v)));
        let range = WindowSpec::new(start, self.w)?.range(i.frames)?;
        let win = tape.slice(i.scores, range.start, range.len());
        let sm = tape.softmax(win);
        let alpha = tape.pad(sm, range.start, i.frames);
        let context = tape.matvec_t(i.h, alpha);
        carry.prev = Some(alpha);
        Ok(TapeAttended {
            context,
            weights: alpha,
        })
    }
}

#[derive(Debug)]
struct Mocha {
    w: usize,
}

impl AttentionMechanism for Mocha {
    fn kind(&self) -> AttentionKind {
        AttentionKind::Mocha { w: self.w }
    }

    fn needs_monotonic_head(&self) -> bool {
        true
    }

    fn attend(&self, inputs: &StepInputs<'_>, carry: &mut InferCarry) -> Result<Attended> {
        let mono = inputs
            .mono
            .ok_or_else(|| Error::Contract("MoChA needs monotonic scores".into()))?;
        let state = carry
            .monotonic
            .take()
            .unwrap_or_else(|| MonotonicState::new(inputs.h.len()));
        let step = mocha_infer(mono, &inputs.scores.e, inputs.h, &state, self.w)?;
        carry.monotonic = Some(step.state);
        Ok(Attended {
            context: step.context,
            weights: step.weights,
            gates: None,
            endpoint: step.endpoint,
        })
    }

    fn attend_tape(&self, tape: &mut Tape, i: &TapeStepInputs, carry: &mut TapeCarry) -> Result<TapeAttended> {
        let (mono, mono_bias) = i
            .mono
            .ok_or_else(|| Error::Contract("MoChA needs monotonic scores".into()))?;
        let prev = match carry.prev {
            Some(v) => v,
            None => tape.vector(first_step_prior(i.frames)),
        };
        let biased = tape.add_scalar(mono, mono_bias);
        let (alpha, beta) = tape_mocha(tape, biased, i.scores, prev, self.w);
        let context = tape.matvec_t(i.h, beta);
        carry.prev = Some(alpha);
        Ok(TapeAttended {
            context,
            weights: beta,
        })
    }
}

pub type MechanismFactory = fn(&AttentionKind) -> Result<Box<dyn AttentionMechanism>>;

/// Name-keyed table of attention constructors.
#[derive(Clone)]
pub struct AttentionRegistry {
    factories: BTreeMap<&'static str, MechanismFactory>,
}

impl fmt::Debug for AttentionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

fn window_len(kind: &AttentionKind) -> Result<usize> {
    match *kind {
        AttentionKind::Windowed { w } | AttentionKind::Mocha { w } if w >= 1 => Ok(w),
        AttentionKind::Windowed { .. } | AttentionKind::Mocha { .. } => {
            Err(Error::Config(format!("{} needs a window length w >= 1", kind.name())))
        }
        _ => Err(Error::Config(format!("{} takes no window length", kind.name()))),
    }
}

impl AttentionRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("gsa", |_| Ok(Box::new(GlobalSoft)));
        r.register("grc", |_| Ok(Box::new(GatedRecurrent { decreasing: false })));
        r.register("decgrc", |_| Ok(Box::new(GatedRecurrent { decreasing: true })));
        r.register("windowed", |k| Ok(Box::new(Windowed { w: window_len(k)? })));
        r.register("mocha", |k| Ok(Box::new(Mocha { w: window_len(k)? })));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: MechanismFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, kind: &AttentionKind) -> Result<Box<dyn AttentionMechanism>> {
        let factory = self
            .factories
            .get(kind.name())
            .ok_or_else(|| Error::Config(format!("no attention registered as {:?}", kind.name())))?;
        factory(kind)
    }
}

impl Default for AttentionRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Builds a mechanism from the built-in registry.
pub fn build_mechanism(kind: &AttentionKind) -> Result<Box<dyn AttentionMechanism>> {
    AttentionRegistry::with_builtins().build(kind)
}
