//! Multi-scale residual deblurring, from first principles.
//!
//! The crate is `no_std` + `alloc` by default-feature opt-out. Everything in
//! here is pure computation over in-memory buffers: a small dense tensor core
//! with hand-written forward/backward passes, kernel-free blur synthesis from
//! frame sequences, Gaussian pyramids and augmentation, the multi-scale
//! generator and its discriminator, losses, the training step and image
//! quality metrics. File formats, image IO and the command line live in the
//! `msdeblur` crate.
//!
//! All arithmetic is `f64`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod activation;
pub mod adam;
pub mod augment;
pub mod blur;
pub mod checks;
pub mod conv;
pub mod error;
pub mod gradcheck;
mod linalg;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
