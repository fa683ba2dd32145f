//! Data-origin membership inference.
//!
//! Given white-box access to a trained model and a set of samples from one
//! data origin (a data generator or subject), decide whether any training
//! sample of the model came from that origin. Shadow models trained on proxy
//! data supply labeled layer outputs; bags of layer outputs are summarized by
//! learning-free statistics and classified by a meta-model.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod featurize;
pub mod ingest;
pub mod linalg;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
