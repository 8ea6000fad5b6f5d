//! Retrieval-based response suggestion: a dual encoder (bidirectional SRU
//! with multi-head attention pooling) trained with shared sampled negatives,
//! response whitelists, offline ranking metrics, and a low-latency server.

pub mod config;
pub mod corpus;
pub mod dual_model;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod serve;
pub mod whitelist;

pub use error::{Error, Result};
