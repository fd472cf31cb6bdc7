//! Facial expression recognition under upper-face occlusion.
//!
//! The crate covers corpus ingestion ([`data`]), image preprocessing
//! ([`transforms`]), a small CPU convolutional network ([`model`]),
//! dense-sparse-dense pruning ([`dsd`]), the momentum-SGD training loop
//! and its two-stage orchestration ([`train`]), evaluation and result
//! tables ([`eval`]), and Grad-CAM explanations ([`explain`]).

pub mod data;
pub mod dsd;
pub mod error;
pub mod eval;
pub mod explain;
pub mod model;
pub mod pixels;
pub mod tensor;
pub mod train;
pub mod transforms;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Error, Result};
