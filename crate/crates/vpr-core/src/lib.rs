//! Core library for structure-aware place recognition: segmentation label
//! map encoding, two-branch descriptor training, recall-ranking sample
//! partition, per-sample weighted feature distillation, and Recall@N
//! retrieval evaluation.

pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod extract;
pub mod model;
pub mod partition;
pub mod slme;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
