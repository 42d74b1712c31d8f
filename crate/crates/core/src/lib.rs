//! Softmax-free attention for online encoder-decoder models.
//!
//! The crate implements gated recurrent context (GRC) attention, its
//! decreasing-gate online variant (DecGRC), and the conventional attentions
//! they are usually compared against, on top of a small reverse-mode tape.
//! A desk-scale encoder-decoder, a streaming decoder with threshold-based
//! endpointing, and latency/accuracy metrics make every variant runnable end
//! to end.

pub mod attention;
pub mod baselines;
pub mod config;
pub mod error;
pub mod mechanism;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod run;
pub mod streaming;
pub mod verify;

pub use error::{Error, Result};
