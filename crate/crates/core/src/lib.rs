//! Example-based super-resolution and texture synthesis by pixel-space
//! descent: a blur-downsample faithfulness term plus Gram-matrix texture
//! statistics of an example image measured in a fixed convolutional feature
//! extractor, globally or restricted to paired binary masks.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]: f32 or f64);
//! the concrete aliases below name the two instantiations used in practice.

// validation sites write `!(x > 0)` on purpose: unlike `x <= 0`, it also
// rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod error;
pub mod image;
pub mod losses;
pub mod masks;
pub mod net;
pub mod optim;
pub mod patchmatch;
pub mod rng;
pub mod sampling;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the fast (f32) pipeline.
pub type Image32 = image::Image<f32>;
pub type Kernel32 = sampling::GaussianKernel<f32>;
pub type Network32 = net::Network<f32>;
pub type NnField32 = patchmatch::NnField<f32>;

/// Concrete aliases for the verification (f64) pipeline.
pub type Image64 = image::Image<f64>;
pub type Kernel64 = sampling::GaussianKernel<f64>;
pub type Network64 = net::Network<f64>;
pub type NnField64 = patchmatch::NnField<f64>;
