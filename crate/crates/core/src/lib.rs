//! Differentiable architecture search for lightweight single-image
//! super-resolution.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that does
//! not touch the file system: a reverse-mode tape over `f64` tensors, the
//! cell-level and network-level search space, analytic complexity
//! accounting, the training and search losses, genotype extraction and
//! derived networks, the data pipeline, metrics, and the search and
//! retraining loops.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod complexity;
pub mod data;
pub mod error;
pub mod genotype;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod search;
pub mod search_space;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
