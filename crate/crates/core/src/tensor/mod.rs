//! Dense matrices, the differentiable kernel set, and the gradient tape.

pub mod gradcheck;
pub mod kernels;
mod matrix;
mod scalar;
pub mod tape;

pub use gradcheck::{finite_diff_check, GradReport};
pub use kernels::{Activation, Mode, RunningStats};
pub use matrix::Matrix;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
