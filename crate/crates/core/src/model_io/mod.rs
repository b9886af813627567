//! On-disk formats: model containers, PPM frame directories, and the
//! synthetic video generator that feeds them.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! "RCAM" | u16 version | u32 header length | JSON header | f32 payload | u32 CRC32(payload)
//! ```

mod container;
mod frames;
mod synth;

use thiserror::Error;

use crate::tensor::Shape4;

pub use container::{
    ContainerHeader, ModelContainer, ModelKind, TensorEntry, FORMAT_VERSION, MAGIC, TVP_PREFIX,
};
pub use frames::{
    decode_ppm, encode_ppm, frame_file_name, frame_paths, from_byte, quantize_8bit, read_frame, read_frames,
    to_byte, write_frame, write_frames,
};
pub use synth::{generate_synthetic_video, SynthConfig};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, not a model container")]
    BadMagic([u8; 4]),
    #[error("container version {0} is not supported")]
    UnsupportedVersion(u16),
    #[error("payload CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("container truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected bytes after the checksum")]
    TrailingBytes(usize),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("manifest does not match tensors: {0}")]
    Manifest(String),
    #[error("frames must be (1, 3, h, w), got {0}")]
    FrameShape(Shape4),
    #[error("{}{reason}", index.map(|i| format!("frame {i}: ")).unwrap_or_default())]
    Frame { index: Option<usize>, reason: String },
}
