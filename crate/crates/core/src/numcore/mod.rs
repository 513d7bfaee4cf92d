//! Dense numeric kernel: tensors, a define-by-run compute graph with
//! reverse-mode gradients, named parameter storage, and a finite-difference
//! gradient checker. Everything is f64, row-major, CPU-only.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{log_sigmoid, sigmoid, softmax, Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use params::{read_str, read_u64, write_str};
