//! Cross-domain few-shot learning with unlabelled target-domain data.

pub mod backbone;
pub mod config;
pub mod contrastive;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod protonet;
pub mod rotation;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};
