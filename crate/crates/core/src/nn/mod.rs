//! Dense tensors, reverse-mode autodiff, layers, Adam and gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, relative_error, Evaluation, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{softmax2, BatchStats, Gradients, Graph, Padding, Var, BATCHNORM_EPS};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
