//! Reverse-mode automatic differentiation over dense 2-D tensors.

mod gradcheck;
mod graph;
mod params;
mod precise;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, ParamCheck};
pub use graph::{log_sum_exp, Axis, Gradients, Graph, OpKind, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use precise::Dd;
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
