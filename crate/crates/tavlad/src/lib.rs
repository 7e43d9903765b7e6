//! Attention-weighted recurrent VLAD video descriptors.
//!
//! The pipeline turns a video's per-frame convolutional feature volume into a
//! fixed-length, unit-norm descriptor and a class prediction:
//!
//! 1. A class activation map of the winning class, squashed through a sigmoid,
//!    weights each spatial cell of a frame ([`attention`]).
//! 2. Each frame is soft-assigned against a learned codebook and encoded as a
//!    matrix of attention-weighted residuals ([`vlad`]).
//! 3. One GRU per codebook cluster (shared parameters) folds the frame
//!    descriptors over time; final states are intra-normalized, flattened and
//!    L2-normalized ([`temporal`]). A plain temporal sum is available as the
//!    order-invariant baseline.
//! 4. A linear classifier with dropout produces logits ([`model`]), trained in
//!    two stages with Adam and a step-decay schedule ([`trainer`]).
//!
//! Everything runs on a small f64 tensor core with a tape-based reverse-mode
//! gradient engine and a finite-difference checker ([`numerics`]). Feature
//! volumes, attention weights, checkpoints and synthetic datasets are read and
//! written through [`dataio`].

pub mod attention;
pub mod codebook;
pub mod dataio;
pub mod error;
pub mod model;
pub mod numerics;
pub mod temporal;
pub mod trainer;
pub mod vlad;

pub use error::{Error, Result};
