//! Tensor arithmetic, reverse-mode gradients, optimizers and gradient checks.

pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_report, gradcheck_trials, gradcheck_with_params, GradcheckReport, TrialSummary};
pub use mlp::{mlp_apply, Activation, Mlp};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
