//! Dense f64 tensors, elementary differentiable operations, a tape-based
//! reverse-mode gradient engine, a deterministic PRNG and a finite-difference
//! gradient checker. Every other module builds on these pieces.

mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, ParamSpec};
pub use ops::{intra_normalize, l2_normalize, log_sum_exp, sigmoid, softmax, NORM_EPS};
pub use rng::Rng;
pub use tape::{BufId, GradientTape};
pub use tensor::Tensor;
