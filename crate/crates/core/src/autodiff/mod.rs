//! Reverse-mode differentiation over dense matrices.

mod check;
mod tape;

pub use check::{finite_difference_check, sample_coordinates};
pub use tape::{Gradients, Tape, Var};
