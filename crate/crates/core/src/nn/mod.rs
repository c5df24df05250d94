//! Minimal tensor engine and the multi-headed detector network.
//!
//! Every layer has a hand-written backward pass; [`gradcheck`] verifies them
//! against central finite differences.

mod attention;
pub mod gradcheck;
mod layers;
mod lstm;
mod model;
pub mod real;
pub mod reference;
mod tensor;
mod train;

pub use attention::{mhsa_backward, mhsa_forward, AttentionCache, AttentionGrads, AttentionParams};
pub use layers::{
    conv1d, conv1d_backward, cross_entropy, dense, dense_backward, dropout, dropout_mask, relu_backward_inplace,
    relu_inplace, softmax, softmax_cross_entropy_backward, temporal_pool, temporal_pool_backward, ConvSpec,
};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmGrads, LstmParams};
pub use model::{describe, ArchConfig, Gradients, Model, ParamStore, Tape, Variant, MAX_PARAMS};
pub use tensor::Tensor;
pub use train::{train, train_with, TrainConfig, TrainReport};
