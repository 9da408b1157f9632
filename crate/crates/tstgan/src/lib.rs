//! TsT-GAN laboratory: a transformer-based generative framework for
//! multivariate time-series, trained end to end on CPU.
//!
//! The crate is organised around the pipeline:
//!
//! - [`tensor`] — dense tensors with reverse-mode automatic differentiation
//! - [`nn`] — linear/attention/transformer/GRU layers and the Adam optimizer
//! - [`model`] — the four model components and the five training losses
//! - [`train`] — three-stage schedule, ablation wiring, checkpoints
//! - [`data`] — sine-wave generation, CSV ingestion, windowing, scaling
//! - [`eval`] — predictive/discriminative scores and t-SNE diagnostics
//! - [`gradcheck`] — finite-difference verification of every gradient rule
//!
//! The `tstgan` binary exposes all of it as subcommands.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
