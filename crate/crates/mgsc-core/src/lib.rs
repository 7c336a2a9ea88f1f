//! Consistency-regularized sequence-to-sequence transduction at desk scale.
//!
//! The crate provides the training objective — a hybrid CTC/attention task
//! loss plus two consistency regularizers (attention-path monotonicity and
//! pooled-representation cosine) — together with a minimal encoder-decoder
//! that produces exact gradients for all of it, a synthetic noisy
//! transduction task, evaluation metrics and numerical verification
//! oracles. Everything is deterministic given its seeds.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the
//! experiment runner live in the companion `mgsc-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod asr;
pub mod balancer;
pub mod check;
pub mod consistency;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use linalg::Mat;
