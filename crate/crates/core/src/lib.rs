//! Core algorithms for forecasting grid traffic with a vision-language model
//! that reads and writes single-token numbers.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, IO and the
//! command-line driver live in the companion `stvl` crate.
//!
//! - [`numcodec`]: the `<|FPm/b|>` vocabulary and its codec.
//! - [`grid`]: traffic tensors, imputation, splits and sample windows.
//! - [`visual`]: power-law normalization, pseudo-RGB frames, patching and a
//!   deterministic stand-in patch encoder.
//! - [`dataset`]: numeric alignment corpora and SFT records with loss masks.
//! - [`rl`]: reward, group-relative advantages, KL and the clipped surrogate.
//! - [`eval`]: observed-only metrics and grid reconstruction.
//! - [`bench`]: synthetic traffic, baseline forecasters and a toy policy.

#![no_std]

extern crate alloc;

pub mod bench;
pub mod civil;
pub mod dataset;
pub mod eval;
pub mod grid;
pub mod numcodec;
pub mod rl;
pub mod rng;
pub mod visual;

pub use numcodec::{FpToken, RangeMode, Vocabulary};
