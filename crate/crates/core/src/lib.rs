//! Gated dilated-convolution sequence encoder with note-code interaction
//! scoring, for multi-label assignment of codes to clinical-style text.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), text preprocessing and CBOW embedding pretraining
//! ([`text`]), the encoder/scorer model ([`model`]), Adam training and
//! random hyper-parameter search ([`train`]), the evaluation metrics the
//! task is reported with ([`metrics`]), and a synthetic trigger-based
//! dataset generator ([`synth`]) so the whole pipeline can be exercised
//! without restricted clinical data.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{grad_check, GradCheckConfig, GradCheckReport, Tape, Tensor};
