//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use ops::{concat_channels, elementwise, sum, weighted_sum, ElementwiseKind, Operand};
pub use tape::{GradFn, Tape, Var};
