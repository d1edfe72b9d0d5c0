//! IO, file formats, and pipeline orchestration for the hyperspectral
//! diffusion-classification workflow. The math lives in
//! `hyperdiff-core`; this crate owns everything that touches disk:
//! cube containers, checkpoints, feature containers, rendered maps,
//! run configuration, and the staged pipeline the CLI drives.

pub mod archive;
pub mod config;
pub mod container;
pub mod error;
pub mod featio;
pub mod render;
pub mod report;
pub mod stages;

pub use error::{Error, Result};
