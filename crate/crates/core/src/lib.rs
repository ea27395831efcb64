//! Densely-sampled light field reconstruction from sparse views by
//! inpainting epipolar-plane images in a shearlet domain.
//!
//! Two restorers share one geometric pipeline ([`restore`]): an iterative
//! thresholding solver ([`st`]) and a residual encoder-decoder applied to
//! the coefficient stack ([`network`]).

pub mod epi;
pub mod error;
mod fft;
pub mod lfw;
pub mod lightfield;
pub mod metrics;
pub mod network;
pub mod restore;
pub mod shearlet;
pub mod st;
pub mod synth;

pub use error::{Error, Result};
