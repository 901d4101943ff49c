//! Respiratory-sound cycle classification toolkit.
//!
//! Recordings with per-cycle annotations are cut into breathing cycles,
//! turned into log-mel / MFCC matrices, rendered as fixed-size images and
//! classified into Normal, Crackles, Wheezes or Both by a frozen
//! convolutional feature extractor followed by a trainable softmax head.
//! Evaluation uses patient-disjoint k-fold cross-validation.
//!
//! ```text
//! dataset -> dsp -> imaging -> model -> eval
//!                      synth (test corpora)   cli (commands, cache, reports)
//! ```

// `!(x > 0.0)` is used on purpose: it rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod matrix;
pub mod model;
pub mod synth;

pub use dataset::{AudioClip, ClassLabel, CycleAnnotation, LabeledCycle, RecordingMeta};
pub use error::{Error, Result};
pub use matrix::{Matrix, Tensor3};
