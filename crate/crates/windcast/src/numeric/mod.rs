//! Dense arrays, positive-definite linear algebra, reverse-mode
//! differentiation, and the Adam optimizer.

pub mod adam;
pub mod array;
pub mod linalg;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::Array;
pub use linalg::{cholesky, finite_diff_grad, log_det_pd, solve_pd, symmetric_eigen};
pub use tape::{place_cols, stack_cols, Gradients, Tape, Var};
