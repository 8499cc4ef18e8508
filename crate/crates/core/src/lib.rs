//! Latent embeddings of expression profiles and the classifiers built on them.
//!
//! A dense autoencoder compresses expression vectors into a latent space;
//! feed-forward, multi-head self-attention and graph convolutional classifiers
//! are trained on the embeddings, and upstream-trained classifiers are scored
//! zero-shot on downstream populations.

pub mod checkpoint;
pub mod classifiers;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Matrix, Scalar};
