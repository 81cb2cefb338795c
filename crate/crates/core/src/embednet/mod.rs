//! Autograd engine, residual convolutional embedder and siamese training.

pub mod graph;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod train;

pub use graph::{Gradients, Graph, Var};
pub use layers::{conv_forward, residual_forward, Activation, ConvLayer, Dense, ResidualBlock};
pub use loss::{contrastive_loss, triplet_loss};
pub use metrics::davies_bouldin;
pub use net::{patch_tensor, EmbedNet, NetArch, EMBED_DIMS};
pub use tensor::Tensor;
pub use train::{train_on_triplets, train_siamese, Adam, LabeledSample, LossKind, Pair, TrainConfig, TrainReport, Triplet};
