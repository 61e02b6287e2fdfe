//! Diffusion-model policies for multi-user MISO power allocation.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: channels, the sum-SE objective and its gradient, the
//!   regularized-inverse beamformer structure, WMMSE and a grid oracle.
//! * [`diffusion`]: DDPM schedules, forward noising, reverse denoising and
//!   conditional action sampling with best-of-N selection.
//! * [`nn`]: FNN and permutation-equivariant GNN predictors with hand-written
//!   backpropagation, plus a small Adam optimizer.
//! * [`training`]: supervised, model-based, Lagrangian and model-free
//!   training loops and the direct-policy baselines.
//! * [`harness`]: experiment configuration, sweeps, checkpoints and result
//!   files.

pub mod diffusion;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
