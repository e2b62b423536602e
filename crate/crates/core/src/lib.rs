//! Sparsity-regularized limited-angle CT reconstruction.
//!
//! The crate provides the band-limited parallel-beam transform and its exact
//! adjoint, orthogonal 2D wavelet transforms, the wavelet-subband
//! convolutional filter bank representing the normal operator, ISTA and its
//! perturbed variant, two unrolled trainable reconstruction networks with
//! hand-derived gradients, image-quality metrics, and file formats for every
//! artifact. The `lact` binary in the companion crate wires these into
//! dataset generation, training, reconstruction, and evaluation workflows.

pub mod config;
pub mod error;
pub mod image;
pub mod ista;
pub mod metrics;
pub mod phantom;
pub mod opbank;
pub mod psidonet;
pub mod store;
pub mod tomo;
pub mod wavelet;

pub use error::{LactError, Result};
pub use image::Image;
