//! Dense networks with exact reverse-mode gradients, Adam and target updates.

mod adam;
mod gradcheck;
pub mod io;
mod loss;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_with_step, CheckLoss, FD_STEP};
pub use loss::Loss;
pub use matrix::{axpy, dot, Matrix};
pub use mlp::{
    clip_global_norm, polyak_update, Activation, ForwardCache, Grads, InitScheme, Layer, Mlp,
};
