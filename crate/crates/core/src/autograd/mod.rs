//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node returns a [`GradientMap`] holding
//! the gradient of every trainable leaf. Graphs are built fresh per batch.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_gradients, finite_difference_grad, relative_error, GradCheckReport};
pub use graph::{GradientMap, Graph, Var};
pub use tensor::Tensor;
