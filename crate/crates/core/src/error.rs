use std::path::PathBuf;

use thiserror::Error;

use crate::grad::GradError;
use crate::model_io::FormatError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("block {block} uses concat merging, which changes the channel count inside a residual body")]
    ConcatInBody { block: usize },
    #[error("prompt {prompt_h}x{prompt_w} does not fit in a {frame_h}x{frame_w} frame")]
    PromptTooLarge {
        prompt_h: usize,
        prompt_w: usize,
        frame_h: usize,
        frame_w: usize,
    },
    #[error("cannot split {frames} frames into {chunks} chunks")]
    Chunking { frames: usize, chunks: usize },
    #[error("training diverged: {0}")]
    NumericFailure(Box<NumericDiagnostics>),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// State captured when the training loss stops being finite.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NumericDiagnostics {
    pub iteration: u64,
    pub loss: f64,
    pub learning_rate: f64,
    /// L2 norm of each parameter gradient at the failing step, by name.
    pub grad_norms: Vec<(String, f64)>,
}

impl std::fmt::Display for NumericDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let max = self
            .grad_norms
            .iter()
            .map(|(_, n)| *n)
            .fold(0.0f64, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
        write!(
            f,
            "loss {} at iteration {} (lr {:e}, max grad norm {})",
            self.loss, self.iteration, self.learning_rate, max
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
