//! Unsupervised dynamic MRI reconstruction by motion-compensated implicit
//! neural representations.
//!
//! A dynamic image sequence is modeled as a shared canonical image warped by
//! a time-varying displacement field. Both are coordinate networks (a
//! multiresolution hash encoding feeding a small convolutional decoder),
//! fitted jointly against undersampled multi-coil k-space data through a
//! differentiable acquisition model.

pub mod autodiff;
mod container;
pub mod error;
pub mod hashenc;
pub mod kspace;
pub mod metrics;
pub mod nets;
pub mod phantom;
pub mod real;
pub mod sampling;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
