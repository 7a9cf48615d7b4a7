//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records primitive operations in evaluation order. Leaves are
//! plain arrays: parameters, inputs and constants are all leaves, so a
//! single backward sweep yields gradients with respect to network weights
//! and network inputs alike.
//!
//! Elementwise binary operations broadcast only a one-element operand
//! against an array; anything else is a shape error.

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{central_differences, finite_diff_check, max_relative_error, tape_function};
pub use tape::{Gradients, NodeId, OpKind, Tape};
