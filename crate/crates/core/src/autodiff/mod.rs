//! Dense-tensor reverse-mode automatic differentiation.

mod graph;
mod gradcheck;
mod init;
mod linalg;
mod lstm_kernel;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, ParamKey, Precision, Var};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, ParamCheck};
pub use init::{xavier_bound, xavier_init, xavier_uniform};
pub use optim::{Direction, RmsProp, RmsPropState};
pub use params::{load_checkpoint, save_checkpoint, Bound, ParamStore};
pub use tensor::Tensor;
