//! Reverse-mode differentiation over dense (batch, height, width, channel)
//! arrays.
//!
//! Only the operations needed by the cellular automaton and its losses are
//! provided. A [`Tape`] records every operation applied to its variables and
//! [`Tape::backward`] walks the record in reverse to produce gradients.

mod gradcheck;
mod kernel;
mod tape;

pub use gradcheck::{grad_check, grad_check_piecewise, grad_check_with, GradCheck, GradCheckReport};
pub use kernel::Kernel3;
pub use tape::{Gradients, ResamplePlan, Tape, Tap, Var};
