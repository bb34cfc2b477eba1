//! Dense double-precision tensors, reverse-mode differentiation, AdamW and
//! the one-cycle schedule.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use kernels::{bce_with_logits, masked_softmax, sigmoid};
pub use layers::{AttentionParams, LinearParams};
pub use optim::{AdamW, OneCycleSchedule};
pub use tape::{AttentionLayout, Gradients, Tape, Var};
pub use tensor::{ParamStore, Tensor};
