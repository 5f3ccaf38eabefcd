//! Feed-forward softmax classifier with manual backpropagation.

mod checkpoint;
mod net;
mod optim;
mod params;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{backward, forward, last_layer_grad_norm, loss, softmax_rows};
pub use optim::{sgd_step, MomentumState, OptConfig};
pub use params::{init_params, Activation, Gradients, ModelLayout, ModelParams};
pub use train::{evaluate, local_train, mean_loss, GradNormTrace, LocalOutcome, NormOrder};
