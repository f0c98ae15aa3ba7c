//! Masked self-supervised monocular depth estimation at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! pinhole view-synthesis geometry, the photometric/smoothness objective,
//! blockwise and random patch masking, toy vision-transformer depth and
//! ego-motion networks, a synthetic ray-cast scene generator, robustness
//! perturbations (corruptions, occlusions, adversarial attacks), depth and
//! odometry metrics, and the training/evaluation/ablation driver behind the
//! `mimdepth` command-line tool.

pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod robustness;
pub mod seeds;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tensor, TensorError};
