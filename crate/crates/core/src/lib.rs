//! Dynamic semantic 3D Gaussian splatting on the CPU.
//!
//! A scene is a set of 3D Gaussians carrying color and a semantic feature
//! vector, plus a deformation MLP that moves them through time. The crate
//! trains both from posed video frames with per-frame feature maps, renders
//! color / feature / alpha images, and selects Gaussians semantically by
//! query embedding, click or pixel set.

pub mod bench;
pub mod commands;
pub mod deformation;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod raster;
pub mod scene;
pub mod semantics;
pub mod service;
pub mod synth;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
