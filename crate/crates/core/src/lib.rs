//! Scene-flow estimation on point clouds with random sampling.
//!
//! The crate is `no_std` (with `alloc`) so the network, the point kernels and
//! the metrics can run anywhere; file formats, training drivers and the CLI
//! live in the `rmsflow` companion crate.
//!
//! Layout:
//! - [`numcore`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! - [`geom`]: random and farthest-point sampling, exact KNN (brute force and grid).
//! - [`pyramid`]: hierarchical feature extraction (LFA, downsampling, upsampling).
//! - [`flowembed`]: the patch-to-dilated-patch flow embedding.
//! - [`predictor`]: warping, flow estimators, the full forward pass and the loss.
//! - [`metrics`]: EPE3D, Acc3DS, Acc3DR and Out3D.
//! - [`data`]: synthetic scene pairs, subsampling and augmentation.
//! - [`gradcheck`]: finite-difference checks of tape gradients.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

mod error;
mod scalar;

pub mod data;
pub mod flowembed;
pub mod geom;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod numcore;
pub mod predictor;
pub mod pyramid;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
