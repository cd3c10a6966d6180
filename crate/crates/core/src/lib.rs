//! Symbolic reduced-order models of hybrid legged jumping dynamics.
//!
//! Trajectories are compressed by a linear autoencoder into a small latent
//! space, where per-phase sparse second-order dynamics are identified by
//! sequentially thresholded least squares over a library of candidate
//! terms.

pub mod aslip;
pub mod autoencoder;
pub mod data;
pub mod error;
pub mod library;
pub mod linalg;
pub mod ode;
pub mod pipeline;
pub mod rollout;
pub mod serde_mat;
pub mod sindy;
pub mod synthetic;

pub use error::{Error, Result};
