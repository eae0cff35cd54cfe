//! Dense MLP with hand-written backpropagation.

pub mod loss;
pub mod matrix;
pub mod model;
pub mod network;
pub mod sgd;

pub use loss::{ce_loss, combined_loss_backward, kl_loss, temp_softmax, DistillConfig, KlDirection};
pub use matrix::DenseMatrix;
pub use model::{Layer, ModelParams};
pub use network::{accuracy, backward, forward, predict, ForwardTrace};
pub use sgd::{sgd_step, SgdState};
