//! Dense tensors, differentiable kernels, the operation tape, SGD with
//! momentum and a finite-difference gradient checker.

mod gradcheck;
pub mod ops;
mod param;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_sampled, DEFAULT_MAX_COORDS};
pub use param::{sgd_momentum_step, Param};
pub use rng::{Rng, RngState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::dot;
