//! Minimal deterministic CNN engine: forward inference, reverse-mode
//! gradients, masked momentum-SGD updates, and checkpoint I/O.

pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use io::{load_weights, save_weights};
pub use layers::LayerSpec;
pub use network::{loss_softmax_ce, BnMode, Gradients, Network, Params};
pub use optim::{xavier_init, TrainState};
pub use scalar::Scalar;
pub use tensor::Tensor;
