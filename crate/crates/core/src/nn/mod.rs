//! A small trainable network engine: dense, conv, batch-norm, pooling and
//! ReLU layers, softmax cross-entropy, and masked SGD.

pub mod layers;
pub mod loss;
pub mod lr;
pub mod models;
pub mod network;
pub mod optim;

pub use layers::{BatchNorm2d, Conv2d, Dense, Layer, LayerSpec, MaxPool2d};
pub use loss::cross_entropy_loss;
pub use lr::LrSchedule;
pub use network::{ForwardCache, Gradients, LayerGrad, Network, ParamSlot};
pub use optim::{sgd_step, SgdConfig, SgdState};
