//! On-disk layout of a chunked delivery: `chunks.json` plus one LR frame
//! directory per chunk, each numbered from zero.

use std::fs;
use std::path::{Path, PathBuf};

use repcam::model_io::{frame_paths, read_frames};
use repcam::tensor::Tensor4;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const INDEX_FILE: &str = "chunks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkIndex {
    pub scale: u32,
    pub frames: usize,
    /// Half-open global frame ranges.
    pub bounds: Vec<(usize, usize)>,
    pub hr_dims: (usize, usize),
    pub lr_dims: (usize, usize),
}

pub fn chunk_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("chunk_{k:03}"))
}

impl ChunkIndex {
    pub fn load(root: &Path) -> Result<Self, CliError> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|_| CliError::Usage(format!(
            "{} is not a chunk directory (no {INDEX_FILE})",
            root.display()
        )))?;
        let index: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if index.bounds.iter().map(|(a, b)| b - a).sum::<usize>() != index.frames {
            return Err(CliError::Invalid(format!("{}: chunk bounds do not cover the frames", path.display())));
        }
        Ok(index)
    }

    pub fn write(&self, root: &Path) -> Result<(), CliError> {
        let path = root.join(INDEX_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("index serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| repcam::Error::io(path, e).into())
    }

    pub fn chunks(&self) -> usize {
        self.bounds.len()
    }

    /// Frame files of each chunk.
    pub fn frame_files(&self, root: &Path) -> Result<Vec<Vec<PathBuf>>, CliError> {
        (0..self.chunks())
            .map(|k| {
                let paths = frame_paths(&chunk_dir(root, k))?;
                let (a, b) = self.bounds[k];
                if paths.len() != b - a {
                    return Err(CliError::Invalid(format!(
                        "chunk {k} holds {} frames, index says {}",
                        paths.len(),
                        b - a
                    )));
                }
                Ok(paths)
            })
            .collect()
    }

    /// All LR frames in global order, each with its chunk id.
    pub fn read_lr(&self, root: &Path) -> Result<Vec<(usize, Tensor4<f32>)>, CliError> {
        let mut out = Vec::with_capacity(self.frames);
        for k in 0..self.chunks() {
            let frames = read_frames(&chunk_dir(root, k))?;
            let (a, b) = self.bounds[k];
            if frames.len() != b - a {
                return Err(CliError::Invalid(format!(
                    "chunk {k} holds {} frames, index says {}",
                    frames.len(),
                    b - a
                )));
            }
            out.extend(frames.into_iter().map(|f| (k, f)));
        }
        Ok(out)
    }
}
