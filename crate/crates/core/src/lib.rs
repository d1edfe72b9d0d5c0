//! Core math for the hyperdiff pipeline: a spectral-spatial denoising
//! diffusion model over hyperspectral cubes, per-pixel diffusion-feature
//! extraction, and a small vision-transformer classifier.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File formats, checkpointing, rendering, and the CLI live in the
//! companion `hyperdiff` crate, which drives training through the hook
//! callbacks exposed by [`diffusion`] and [`svit`].
//!
//! Layout:
//! - [`tensor`], [`graph`], [`kernels`]: dense f32 tensors, the operator
//!   catalog, and tape-based reverse-mode gradients
//! - [`param`], [`adam`]: parameter stores and the Adam optimizer
//! - [`hsi`]: cube/label containers, normalization, patches, splits
//! - [`schedule`], [`diffusion`]: variance schedule, forward/reverse
//!   process math, the L1 noise-prediction loss, and the training loop
//! - [`ssdn`]: the 3-D U-Net denoiser with named activation taps
//! - [`pca`], [`features`]: per-pixel diffusion-feature extraction
//! - [`svit`]: the transformer classifier and its training loop
//! - [`metrics`]: confusion matrix, OA/AA/kappa
//! - [`synth`]: synthetic labeled cubes for desk-scale runs

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adam;
pub mod diffusion;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod hsi;
pub mod kernels;
pub mod math;
pub mod metrics;
pub mod param;
pub mod pca;
pub mod rng;
pub mod schedule;
pub mod ssdn;
pub mod svit;
pub mod synth;
pub mod tensor;

pub use tensor::Tensor;
