//! Frequency-aware multimodal graph recommendation.
//!
//! Item content (image and text features) and learned ID embeddings are
//! treated as signals on the user–item bipartite graph. Each signal is split
//! into equal-energy frequency bands with the graph Fourier transform, bands
//! are randomly masked during training with a prediction-consistency penalty,
//! mixed across bands and modalities by a low-rank CP operator, gated by
//! graph structure, and fused with per-node softmax weights. A band-wise
//! contrastive term aligns image and text components of each item.

pub mod autodiff;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod io;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod synth;
pub mod trainer;

pub use error::{Result, SsrError};
