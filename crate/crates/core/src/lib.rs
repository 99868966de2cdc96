//! Structure-preserving model order reduction of planar mass-spring-damper
//! systems with neural autoencoders, plus latent-space posture control.

pub mod autoencoder;
pub mod control;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod msd;
pub mod numerics;
pub mod reduction;
pub mod sim;

pub use error::{Error, Result};
