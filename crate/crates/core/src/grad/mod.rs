//! Reverse-mode differentiation over [`Tensor4`](crate::tensor::Tensor4)
//! primitives, and a central-difference checker for tests.

mod check;
mod tape;

pub use check::{check_tape_gradients, finite_diff_check, FdReport, KINK_RATIO};
pub use tape::{GradError, Gradients, NodeId, PromptSlot, Tape};
