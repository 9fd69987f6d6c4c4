//! Minimal dense-tensor engine for training small sequence labelers.
//!
//! The crate provides a row-major [`Tensor`], a [`Tape`] that records
//! operations for reverse-mode differentiation, a named [`ParamStore`],
//! the [`Adam`] optimizer, a central-difference gradient checker and the
//! binary model file format shared by every architecture.
//!
//! All numeric code is generic over [`Float`] so the same model can run
//! at 32-bit precision for training and 64-bit precision for verification.

pub mod adam;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod init;
mod kernels;
pub mod model_file;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use float::Float;
pub use gradcheck::{grad_check, grad_check_params, summarize, GradCheckReport, FD_STEP};
pub use model_file::ModelFile;
pub use params::{Bound, ParamStore};
pub use rng::RngStream;
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
