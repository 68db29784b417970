//! Minimal reverse-mode differentiation over dense arrays.
//!
//! The kernel set is exactly what the hop-interaction model and its losses
//! need; every kernel records a hand-written adjoint on a [`Tape`].

pub mod gradcheck;
pub mod ops;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Op, Tape, Var};
