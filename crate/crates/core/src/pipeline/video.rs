use std::ops::Range;

use crate::tensor::{bicubic_resize, Scale, Tensor4, TensorError};
use crate::{Error, Result};

/// HR frames split into contiguous chunks, with LR copies once
/// [`make_lr`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedVideo {
    pub hr: Vec<Tensor4<f32>>,
    /// Empty until [`make_lr`]; then one LR frame per HR frame.
    pub lr: Vec<Tensor4<f32>>,
    /// LR = HR / scale; 1 before [`make_lr`].
    pub scale: u32,
    pub bounds: Vec<Range<usize>>,
}

/// Chunk `k` of `n` over `frames` frames: `[⌊kF/N⌋, ⌊(k+1)F/N⌋)`.
pub fn chunk_bounds(frames: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || n > frames {
        return Err(Error::Chunking { frames, chunks: n });
    }
    Ok((0..n).map(|k| k * frames / n..(k + 1) * frames / n).collect())
}

pub fn chunk_video(frames: Vec<Tensor4<f32>>, n: usize) -> Result<ChunkedVideo> {
    let bounds = chunk_bounds(frames.len(), n)?;
    if let Some(first) = frames.first() {
        for f in &frames {
            f.check_same_shape(first)?;
        }
    }
    Ok(ChunkedVideo {
        hr: frames,
        lr: Vec::new(),
        scale: 1,
        bounds,
    })
}

/// Drops bottom rows and right columns so both dims divide by `s`.
pub fn crop_to_multiple(frame: &Tensor4<f32>, s: u32) -> Tensor4<f32> {
    let sh = frame.shape();
    let s = s as usize;
    frame.crop(0, 0, sh.h / s * s, sh.w / s * s)
}

/// Bicubic downscale of every HR frame by `s`.
pub fn make_lr(video: &ChunkedVideo, s: u32) -> Result<ChunkedVideo> {
    let down = Scale::down(s)?;
    let lr = video
        .hr
        .iter()
        .map(|f| {
            let sh = f.shape();
            if sh.h < s as usize || sh.w < s as usize {
                return Err(TensorError::NonIntegralSize { len: sh.h.min(sh.w), scale: down });
            }
            bicubic_resize(f, down)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChunkedVideo {
        hr: video.hr.clone(),
        lr,
        scale: s,
        bounds: video.bounds.clone(),
    })
}

impl ChunkedVideo {
    pub fn frames(&self) -> usize {
        self.hr.len()
    }

    pub fn chunks(&self) -> usize {
        self.bounds.len()
    }

    pub fn chunk_of(&self, frame: usize) -> usize {
        self.bounds
            .iter()
            .position(|r| r.contains(&frame))
            .expect("frame index within the video")
    }

    /// `(h, w)` of the HR frames.
    pub fn hr_dims(&self) -> (usize, usize) {
        let s = self.hr[0].shape();
        (s.h, s.w)
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        let (h, w) = self.hr_dims();
        (h / self.scale as usize, w / self.scale as usize)
    }

    /// A video holding only the frames of chunk `k`, as a single chunk.
    pub fn single_chunk(&self, k: usize) -> ChunkedVideo {
        let r = self.bounds[k].clone();
        ChunkedVideo {
            hr: self.hr[r.clone()].to_vec(),
            lr: if self.lr.is_empty() { Vec::new() } else { self.lr[r.clone()].to_vec() },
            scale: self.scale,
            bounds: vec![0..r.len()],
        }
    }
}

/// Aligned training pair cut from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub hr: Tensor4<f32>,
    pub lr: Tensor4<f32>,
    pub frame: usize,
    /// Top-left corner in HR pixels (multiples of the scale).
    pub hr_y: usize,
    pub hr_x: usize,
    pub chunk: usize,
}

impl ChunkedVideo {
    pub fn patch(&self, frame: usize, hr_y: usize, hr_x: usize, size: usize) -> PatchPair {
        let s = self.scale as usize;
        debug_assert!(hr_y % s == 0 && hr_x % s == 0 && size % s == 0);
        PatchPair {
            hr: self.hr[frame].crop(hr_y, hr_x, size, size),
            lr: self.lr[frame].crop(hr_y / s, hr_x / s, size / s, size / s),
            frame,
            hr_y,
            hr_x,
            chunk: self.chunk_of(frame),
        }
    }
}
