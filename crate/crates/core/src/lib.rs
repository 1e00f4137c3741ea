//! Group-level affect recognition from per-face emotion scores.
//!
//! The pipeline turns per-face 7-emotion score vectors into spatial
//! emotion-intensity heatmaps (one RGB channel per affect class), and trains
//! convolutional networks on those heatmaps. Non-neural baselines (score
//! averaging, a random forest over mean score vectors) and an experiment
//! harness with a stratified hold-out protocol round out the crate.
//!
//! Modules:
//! - [`emotion`]: 7-emotion score vectors, ensemble averaging, affect mapping.
//! - [`data`]: dataset manifests, synthetic data generation, stratified split.
//! - [`heatmap`]: intensity kernels, per-face rendering, composition, export.
//! - [`imageproc`]: bilinear resize and the affine augmentation pipeline.
//! - [`nn`]: a minimal tensor/layer/optimizer engine with reverse-mode
//!   gradients checked against finite differences.
//! - [`models`]: declarative builders for the two network architectures.
//! - [`baselines`]: averaging classifier and from-scratch random forest.
//! - [`harness`]: end-to-end experiment orchestration and reporting.

pub mod baselines;
pub mod data;
pub mod emotion;
pub mod error;
pub mod harness;
pub mod heatmap;
pub mod imageproc;
pub mod models;
pub mod nn;
pub mod rng;

pub use emotion::{AffectTriple, Label, Scores7};
pub use error::{Error, Result};
