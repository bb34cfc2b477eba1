//! Log anomaly-detection laboratory: template mining, sequence assembly,
//! a from-scratch Transformer classifier with pluggable embeddings and
//! time encodings, count-vector baselines, and synthetic corpora.

pub mod assembler;
pub mod baselines;
pub mod embeddings;
pub mod encodings;
pub mod error;
pub mod harness;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod parser;
pub mod synthgen;

pub use error::{Error, Result};
