//! Deterministic synthetic test videos.
//!
//! Each scene is a function on the infinite integer plane: a smooth
//! sinusoidal background, a block of sharp stripes and checkers, and a
//! scatter of flat rectangles with hard edges. Frame `t` samples the plane at
//! `(y - t·dy, x - t·dx)`, so consecutive frames differ by a global integer
//! translation. Halfway through the video the scene is replaced by a new one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor4;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Per-frame translation `(dy, dx)` in pixels.
    pub motion: (i32, i32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 96,
            width: 96,
            motion: (1, 2),
            seed: 0,
        }
    }
}

struct Rect {
    y0: i64,
    x0: i64,
    y1: i64,
    x1: i64,
    color: [f32; 3],
}

enum Pattern {
    Stripes { period: i64, vertical: bool },
    Checker { period: i64 },
}

struct Scene {
    freq: [[f32; 2]; 3],
    phase: [f32; 3],
    base: [f32; 3],
    rects: Vec<Rect>,
    block: Rect,
    pattern: Pattern,
    ink: [f32; 3],
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

impl Scene {
    fn random(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let (h, w) = (cfg.height as i64, cfg.width as i64);
        let travel_y = (cfg.motion.0.unsigned_abs() as i64) * cfg.frames as i64;
        let travel_x = (cfg.motion.1.unsigned_abs() as i64) * cfg.frames as i64;
        let lo_y = -travel_y - 8;
        let lo_x = -travel_x - 8;
        let hi_y = h + travel_y + 8;
        let hi_x = w + travel_x + 8;
        let area = ((hi_y - lo_y) * (hi_x - lo_x)) as f64;
        let count = ((area / 400.0).ceil() as usize).max(4);
        let rects = (0..count)
            .map(|_| {
                let y0 = rng.random_range(lo_y..hi_y);
                let x0 = rng.random_range(lo_x..hi_x);
                Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(4..18),
                    x1: x0 + rng.random_range(4..18),
                    color: color(rng),
                }
            })
            .collect();
        let bh = (h / 3).max(4);
        let bw = (w / 3).max(4);
        let by = rng.random_range(0..(h - bh).max(1));
        let bx = rng.random_range(0..(w - bw).max(1));
        let pattern = if rng.random_bool(0.5) {
            Pattern::Stripes {
                period: rng.random_range(3..6),
                vertical: rng.random_bool(0.5),
            }
        } else {
            Pattern::Checker {
                period: rng.random_range(3..6),
            }
        };
        let mut freq = [[0.0; 2]; 3];
        for f in &mut freq {
            *f = [rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08)];
        }
        Self {
            freq,
            phase: [
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..std::f32::consts::TAU),
            ],
            base: color(rng),
            rects,
            block: Rect {
                y0: by,
                x0: bx,
                y1: by + bh,
                x1: bx + bw,
                color: color(rng),
            },
            pattern,
            ink: color(rng),
        }
    }

    fn sample(&self, y: i64, x: i64, c: usize) -> f32 {
        let inside = |r: &Rect| y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1;
        if let Some(r) = self.rects.iter().rev().find(|r| inside(r)) {
            return r.color[c];
        }
        if inside(&self.block) {
            let on = match self.pattern {
                Pattern::Stripes { period, vertical } => {
                    let t = if vertical { x } else { y };
                    t.rem_euclid(period) * 2 < period
                }
                Pattern::Checker { period } => (y.div_euclid(period) + x.div_euclid(period)) % 2 == 0,
            };
            return if on { self.ink[c] } else { self.block.color[c] };
        }
        let [fy, fx] = self.freq[c];
        let v = self.base[c] + 0.25 * (std::f32::consts::TAU * (fy * y as f32 + fx * x as f32) + self.phase[c]).sin();
        v.clamp(0.0, 1.0)
    }
}

/// Frames `(1, 3, height, width)` with values on the 8-bit grid.
pub fn generate_synthetic_video(cfg: &SynthConfig) -> Result<Vec<Tensor4<f32>>> {
    if cfg.frames == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidConfig("synthetic video needs at least one frame and pixel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scenes = [Scene::random(cfg, &mut rng), Scene::random(cfg, &mut rng)];
    let change = cfg.frames / 2;
    Ok((0..cfg.frames)
        .map(|t| {
            let scene = &scenes[usize::from(t >= change && cfg.frames > 1)];
            let oy = cfg.motion.0 as i64 * t as i64;
            let ox = cfg.motion.1 as i64 * t as i64;
            let frame = Tensor4::from_fn([1, 3, cfg.height, cfg.width], |_, c, y, x| {
                scene.sample(y as i64 - oy, x as i64 - ox, c)
            });
            super::frames::quantize_8bit(&frame)
        })
        .collect())
}
