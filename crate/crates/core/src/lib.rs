//! Writer identification from handwritten word images.
//!
//! The pipeline runs word image → SIFT keypoints → 105×105 patches → siamese CNN
//! embedding → sparse PCA coefficients → divergence-weighted descriptors →
//! one-vs-all RBF SVM scores → word/page fusion.

pub mod bundle;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod embednet;
pub mod error;
pub mod filter;
pub mod imaging;
pub mod keypoints;
pub mod pipeline;
pub mod saliency;
pub mod sparsepca;

pub use error::{Error, Result};
