//! Conventional online attentions kept for comparison: windowed attention and
//! MoChA (inference, expected-alignment training, and the stabilized
//! selection formula used as an oracle).

pub mod mocha;
pub mod windowed;

pub use mocha::{
    mocha_infer, mocha_train_alpha, mocha_train_beta, smocha_alpha, MochaStep, MonotonicState,
};
pub use windowed::{window_start, windowed_attend, WindowSpec};
