//! Graph network, its gradients and the optimizer.

pub mod adam;
mod linalg;
pub mod mlp;
pub mod model;

pub use adam::{adam_step, AdamConfig, OptState};
pub use mlp::{mlp_forward, mlp_init, MlpParams};
pub use model::{batch_loss, gnn_forward, gradients, loss_fn, GnnHyper, GnnModel, GraphBatch, LossWeights, Predictions, TensorSpec};
