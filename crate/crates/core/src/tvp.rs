//! Transparent visual prompts.
//!
//! A prompt is a learnable `(1, 3, S_H, S_W)` patch, zero at creation, that
//! is added to the centered `S_H × S_W` window of every LR frame in its
//! chunk. Because it starts at zero the prompted network initially computes
//! exactly what the unprompted one does.

use crate::grad::{NodeId, PromptSlot};
use crate::repcam::IMAGE_CHANNELS;
use crate::tensor::{Tensor4, TensorError};
use crate::{Error, Result};

pub const DEFAULT_PROMPT_SIZE: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct Tvp {
    pub chunk: usize,
    /// `(1, 3, S_H, S_W)`.
    pub values: Tensor4<f32>,
}

impl Tvp {
    pub fn zeros(chunk: usize, height: usize, width: usize) -> Self {
        Self {
            chunk,
            values: Tensor4::zeros([1, IMAGE_CHANNELS, height, width]),
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape().h
    }

    pub fn width(&self) -> usize {
        self.values.shape().w
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Top-left corner `(Δ_H, Δ_W)` of the prompt in a `frame_h × frame_w`
    /// frame.
    pub fn offsets(&self, frame_h: usize, frame_w: usize) -> Result<(usize, usize)> {
        prompt_offsets(self.height(), self.width(), frame_h, frame_w)
    }

    /// Where the prompt lands in a patch whose top-left corner sits at
    /// `(py, px)` of a `frame_h × frame_w` frame.
    pub fn slot_for_patch(
        &self,
        prompt: NodeId,
        frame_h: usize,
        frame_w: usize,
        py: usize,
        px: usize,
    ) -> Result<PromptSlot> {
        let (dh, dw) = self.offsets(frame_h, frame_w)?;
        Ok(PromptSlot {
            prompt,
            origin_h: dh as isize - py as isize,
            origin_w: dw as isize - px as isize,
        })
    }
}

pub fn prompt_offsets(prompt_h: usize, prompt_w: usize, frame_h: usize, frame_w: usize) -> Result<(usize, usize)> {
    if prompt_h > frame_h || prompt_w > frame_w {
        return Err(Error::PromptTooLarge {
            prompt_h,
            prompt_w,
            frame_h,
            frame_w,
        });
    }
    Ok(((frame_h - prompt_h) / 2, (frame_w - prompt_w) / 2))
}

/// Adds the prompt to the centered window of every item of `frame`. No
/// clamping.
pub fn apply_tvp(frame: &Tensor4<f32>, tvp: &Tvp) -> Result<Tensor4<f32>> {
    let s = frame.shape();
    if s.c != IMAGE_CHANNELS {
        return Err(TensorError::ChannelMismatch {
            expected: IMAGE_CHANNELS,
            actual: s.c,
        }
        .into());
    }
    let (dh, dw) = tvp.offsets(s.h, s.w)?;
    let mut out = frame.clone();
    for b in 0..s.b {
        for c in 0..s.c {
            for i in 0..tvp.height() {
                for j in 0..tvp.width() {
                    let v = out.at(b, c, dh + i, dw + j) + tvp.values.at(0, c, i, j);
                    out.set(b, c, dh + i, dw + j, v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to the prompt, given the gradient with
/// respect to the prompted frames: the centered window, summed over items.
pub fn tvp_gradient(upstream: &Tensor4<f32>, prompt_h: usize, prompt_w: usize) -> Result<Tensor4<f32>> {
    let s = upstream.shape();
    let (dh, dw) = prompt_offsets(prompt_h, prompt_w, s.h, s.w)?;
    let mut acc = vec![0.0f64; s.c * prompt_h * prompt_w];
    for b in 0..s.b {
        for c in 0..s.c {
            for i in 0..prompt_h {
                for j in 0..prompt_w {
                    acc[(c * prompt_h + i) * prompt_w + j] += upstream.at(b, c, dh + i, dw + j) as f64;
                }
            }
        }
    }
    Ok(Tensor4::from_vec([1, s.c, prompt_h, prompt_w], acc.into_iter().map(|v| v as f32).collect())?)
}
