//! Dense tensors, reverse-mode differentiation and the optimiser.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use optim::OptimState;
pub use tensor::Tensor;
