//! Dense `f64` tensors with a reverse-mode gradient pass.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{GradientMap, Graph, Var, PROB_FLOOR};
pub use params::{Bindings, ParamSet};
pub use tensor::Tensor;
