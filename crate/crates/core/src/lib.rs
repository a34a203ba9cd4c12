//! Continuous representation engine for RGB-guided depth map super-resolution.
//!
//! The network learns a coordinate-to-value mapping over a low-resolution
//! depth map and its high-resolution RGB guide, so a trained model can be
//! sampled at arbitrary real-valued scale factors and at arbitrarily warped
//! query coordinates. Feature extraction is built on the geometric spatial
//! aggregator: convolutions whose kernels are modulated per scale by an
//! encoder of the reciprocal squared-distance field.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod gsa;
pub mod io;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
