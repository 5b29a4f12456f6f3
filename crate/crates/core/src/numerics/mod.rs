//! Dense matrices and reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{grad_check, grad_check_graph, GradCheckReport, NamedParams, Parameters};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use matrix::Matrix;
pub(crate) use matrix::sigmoid;
