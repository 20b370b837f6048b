//! Steerable neural cellular automata.
//!
//! Every cell of the grid carries its own orientation and rotates its
//! perceived state gradients by it before applying a small learned update
//! rule. The orientation is either an explicit per-cell angle channel or is
//! inferred from the spatial gradient of a concentration channel.
//!
//! This crate is `no_std` (it needs `alloc`) and contains the pure numerical
//! parts: a minimal reverse-mode differentiation tape, the model, seeding,
//! target preprocessing, the plain and rotation-invariant losses, and the
//! training loop. File formats, rendering and the command line live in the
//! `snca` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
mod error;
pub mod fft;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
mod scalar;
pub mod seeding;
pub mod target;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
