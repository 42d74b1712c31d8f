//! Global soft attention, gated recurrent context and its decreasing-gate
//! variant, the additive score, and the duality transforms between gates and
//! attention weights.

pub mod grc;
pub mod gsa;
pub mod score;
pub mod types;

pub use grc::{
    decgrc_gates, dual_weights, grc_gate, grc_gates, grc_recurse, intermediate_context,
    inverse_dual, padded_dual_weights,
};
pub use gsa::{gsa_context, softmax_weights};
pub use score::{additive_score, ScoreKeys, ScoreParams};
pub use types::{
    AttentionWeights, ContextTrace, EncodedSequence, FeedbackState, GateSequence, ScoreRow,
};
