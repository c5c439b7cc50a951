//! Coordinate-conditioned portrait generation with personalized two-stage
//! training, plus a synthetic toy-face world for end-to-end verification.
//!
//! The generator maps per-pixel encoded coordinates, face parameters and a
//! per-frame latent code through an MLP to a coarse feature map, which a
//! convolutional decoder upsamples into the final image. Training first
//! reconstructs a single performing video, then adds parameters borrowed from
//! auxiliary videos under perceptual, consistency and adversarial losses.

pub mod audio;
pub mod checkpoint;
pub mod discriminator;
pub mod encoding;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod toyworld;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use portrait_autograd as autograd;
