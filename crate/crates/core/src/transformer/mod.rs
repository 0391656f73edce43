//! Pre-norm transformer with analytic gradients.

mod model;
mod params;

pub use model::{accuracy, argmax, evaluate, forward, gradient_check, loss, loss_and_grad, mean_loss, Batch};
pub use params::{init_params, Arch, DecayMask, LayerParams, ModelParams, CHECKPOINT_SCHEMA};

#[cfg(test)]
mod tests;
