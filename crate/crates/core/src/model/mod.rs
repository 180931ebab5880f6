//! Reference masked language model: a small transformer encoder whose output
//! projection is tied to the token embeddings, so the same head scores clue
//! label words and relation label words.

mod loss;
mod network;
mod ops;
mod optim;
mod params;

pub use loss::{
    joint_loss, rcd_loss, rcd_loss_grad, rel_loss, rel_loss_for_word, rel_loss_grad, LossWeights,
    RcdLoss, Reduction,
};
pub use network::{ForwardCache, Logits, Model};
pub use ops::{gelu, gelu_grad, layer_norm};
pub use optim::{AdamConfig, AdamW};
pub use params::{LayerParams, ModelConfig, ModelParams, TensorSpec};
