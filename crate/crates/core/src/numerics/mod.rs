//! Dense `f64` tensors, reverse-mode gradients, finite-difference checks and
//! the Adam optimizer with its step-halving learning-rate schedule.

mod adam;
mod gradcheck;
pub mod linalg;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, adam_step_with_lr, lr_schedule, OptimizerConfig, HALVING_POINTS_PCT};
pub use gradcheck::{
    check_gradients, grad, relative_error, GradCheckOptions, GradCheckReport, ParamCheck,
};
pub use params::{Bindings, Param, ParamStore};
pub use tape::{CustomBackward, Gradients, LinearOp, Tape, Var};
pub use tape::{squeeze2, unsqueeze2};
pub use tensor::{conv2d, matmul, Padding, Tensor};
