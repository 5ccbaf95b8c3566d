//! Reverse-mode automatic differentiation on dense rank-1/2 tensors.

mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use gradcheck::{assert_gradcheck, gradcheck, GradcheckReport};
pub use graph::{Axis, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
