//! Supporting Hyperplane Machine: a margin classifier over `(x, y)` pairs
//! whose decision function `h(x, y) = xᵀWy + w₀ᵀx + b` is bilinear in the
//! input and the (kernel-transformed) output.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod appendix;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod reduction;
pub mod train;

pub use kernel::{kernel_matrix, KernelError, KernelSpec};
pub use linalg::{LinalgError, Matrix};
pub use model::{sign_label, HyperplaneCoeffs, ModelError, ModelMode, ShmModel, ShmWeights, SupportVector, TrainMeta};
pub use qp::{QpError, QpProblem, QpSolution};
pub use reduction::{ConsistencyReport, ReducedProblem, ReductionError};
pub use train::{train, train_detailed, QpMode, TrainConfig, TrainError, Training, TrainingSet};
