//! Greybox explainable classification.
//!
//! A latent-space predictor turns an image into a segmentation map of
//! interpretable attributes, the map becomes a binary attribute vector, and
//! a transparent logistic regression classifies it. Explanations are read
//! directly off the model weights and can be audited against an expert
//! knowledge base.

pub mod classifier;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod kb;
pub mod kg;
pub mod lsp;
pub mod pipeline;

pub use error::{Error, Result};
