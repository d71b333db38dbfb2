//! Desk-scale testbench for split (collaborative) DNN inference under an
//! impulsive feature channel.
//!
//! The crate covers the whole loop: a small convolutional classifier that is
//! partitioned into a device head and an edge tail, a symmetric alpha-stable
//! channel that corrupts transmitted features, a black-box latent
//! interpolation attack, and a noise-aware detector (adVAE features plus a
//! one-class SVM) together with the harness that scores it.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Both paths
//! reduce in a fixed order, so results are bit-identical either way.

pub mod attack;
pub mod detector;
pub mod error;
pub mod eval;
pub mod nn;
pub mod noise;
pub mod par;
pub mod rng;
pub mod split;

pub use error::{Error, FrameError, Result};
