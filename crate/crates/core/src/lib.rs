//! Protection of face photos against black-box face-swapping models.
//!
//! The pipeline trains a face-reconstruction autoencoder as an accessible
//! substitute, trains a cycle-consistent adversary GAN against it to emit
//! bounded perturbations, refines each adversarial example with a projected
//! sign-gradient post-regularization, and evaluates zero-query transfer to
//! an independently trained toy face-swapping model using referenced (SSIM,
//! FSIM) and non-referenced (BRISQUE) image quality metrics.

pub mod attack;
pub mod baselines;
pub mod deepfake;
pub mod error;
pub mod evaluate;
pub mod image;
pub mod iqa;
pub mod nn;
pub mod postreg;
pub mod report;
pub mod rng;
pub mod substitute;
pub mod tcagan;

pub use error::{Error, Result};
