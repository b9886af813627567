//! Content-aware super-resolution for video delivery with multi-branch
//! re-parameterizable convolutions and per-chunk input prompts.

mod error;
pub mod fuse;
pub mod grad;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod repcam;
pub mod tensor;
pub mod tvp;

pub use error::{Error, NumericDiagnostics, Result};
