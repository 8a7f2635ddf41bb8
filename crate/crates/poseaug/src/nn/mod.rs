//! Minimal f64 neural substrate with exact, testable gradients.
//!
//! Design rules, in order of importance:
//!
//! 1. **Tied weights are one storage cell.** Parameters live in a
//!    [`ParamStore`] arena addressed by [`ParamId`]; a layer instance is
//!    just hyperparameters plus ids. Two layers tied across branches hold
//!    the *same* id, so their equality is structural — gradients from both
//!    branches accumulate into one buffer and one optimizer update moves
//!    one tensor.
//! 2. **Layers are stateless.** `forward` takes the store and an input;
//!    `backward` takes whatever the caller cached plus the upstream
//!    gradient, accumulates parameter gradients into a [`Grads`], and
//!    returns the input gradient. Nothing hides state, so the same model
//!    can run any number of concurrent forward passes (rayon batches).
//! 3. **Everything is f64 and branch-free around zero.** Losses that need
//!    `log(sigmoid(x))` compute `-softplus(-x)` directly; no clamping, so
//!    central finite differences reproduce every analytic gradient to
//!    high precision (see [`gradcheck`]).

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff_grads, jitter_params, max_rel_error, GradCheckReport};
pub use layers::{
    concat_channels, dropout_mask, leaky_relu, leaky_relu_bwd, log_sigmoid, log_one_minus_sigmoid,
    relu, relu_bwd, sigmoid, sigmoid_bwd, softplus, split_channels_grad, Conv2d, ConvTranspose2d,
    DropoutMask, Linear, MaxPool2,
};
pub use optim::{OptimConfig, Optimizer};
pub use params::{Grads, Init, ParamId, ParamStore};
pub use tensor::Tensor;
