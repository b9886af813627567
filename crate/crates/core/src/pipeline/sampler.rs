//! Patch samplers.
//!
//! The loss-weighted sampler keeps a weight map over a coarse grid of every
//! frame: each cell holds an exponential moving average of the L1 loss of
//! patches centred in it, and cells are drawn with probability proportional
//! to `EMA + floor`, the floor being a tenth of the mean EMA so no cell
//! starves.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const EMA_DECAY: f64 = 0.9;
pub const FLOOR_FRACTION: f64 = 0.1;
/// Grid cell edge in HR pixels.
pub const CELL_SIZE: usize = 48;
/// Weight of a cell before any patch from it has been scored. L1 losses on
/// `[0, 1]` images sit well below this, so unseen cells are visited early.
pub const UNSEEN_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    #[default]
    Loss,
}

/// A drawn patch position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub frame: usize,
    pub hr_y: usize,
    pub hr_x: usize,
    cell: Option<usize>,
}

/// Aligned top-left corners along one axis.
pub fn aligned_positions(len: usize, patch: usize, scale: usize) -> Vec<usize> {
    if patch > len {
        return Vec::new();
    }
    (0..=len - patch).step_by(scale).collect()
}

#[derive(Debug, Clone)]
struct Cell {
    frame: usize,
    ys: Vec<usize>,
    xs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LossSampler {
    cells: Vec<Cell>,
    ema: Vec<Option<f64>>,
}

impl LossSampler {
    pub fn new(frames: usize, hr_h: usize, hr_w: usize, patch: usize, scale: usize) -> Self {
        let group = |len: usize| {
            let mut by_cell: Vec<Vec<usize>> = Vec::new();
            for p in aligned_positions(len, patch, scale) {
                let cell = (p + patch / 2) / CELL_SIZE;
                if by_cell.len() <= cell {
                    by_cell.resize(cell + 1, Vec::new());
                }
                by_cell[cell].push(p);
            }
            by_cell.retain(|v| !v.is_empty());
            by_cell
        };
        let (rows, cols) = (group(hr_h), group(hr_w));
        let mut cells = Vec::new();
        for frame in 0..frames {
            for ys in &rows {
                for xs in &cols {
                    cells.push(Cell {
                        frame,
                        ys: ys.clone(),
                        xs: xs.clone(),
                    });
                }
            }
        }
        let ema = vec![None; cells.len()];
        Self { cells, ema }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn set_ema(&mut self, cell: usize, value: f64) {
        self.ema[cell] = Some(value);
    }

    pub fn ema(&self, cell: usize) -> Option<f64> {
        self.ema[cell]
    }

    fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.ema.iter().map(|e| e.unwrap_or(UNSEEN_WEIGHT)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let floor = FLOOR_FRACTION * mean;
        raw.into_iter().map(|w| w + floor).collect()
    }

    /// Probability of drawing each cell.
    pub fn probabilities(&self) -> Vec<f64> {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn draw_batch(&self, rng: &mut impl Rng, n: usize) -> Vec<Draw> {
        let weights = self.weights();
        let dist = match WeightedIndex::new(&weights) {
            Ok(d) => d,
            // every weight zero: fall back to uniform
            Err(_) => WeightedIndex::new(vec![1.0; weights.len()]).expect("nonempty"),
        };
        (0..n)
            .map(|_| {
                let i = dist.sample(rng);
                let cell = &self.cells[i];
                Draw {
                    frame: cell.frame,
                    hr_y: cell.ys[rng.random_range(0..cell.ys.len())],
                    hr_x: cell.xs[rng.random_range(0..cell.xs.len())],
                    cell: Some(i),
                }
            })
            .collect()
    }

    pub fn observe(&mut self, draw: &Draw, loss: f64) {
        if let Some(i) = draw.cell {
            self.ema[i] = Some(match self.ema[i] {
                None => loss,
                Some(e) => EMA_DECAY * e + (1.0 - EMA_DECAY) * loss,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct UniformSampler {
    frames: usize,
    ys: Vec<usize>,
    xs: Vec<usize>,
}

impl UniformSampler {
    pub fn new(frames: usize, hr_h: usize, hr_w: usize, patch: usize, scale: usize) -> Self {
        Self {
            frames,
            ys: aligned_positions(hr_h, patch, scale),
            xs: aligned_positions(hr_w, patch, scale),
        }
    }

    pub fn draw_batch(&self, rng: &mut impl Rng, n: usize) -> Vec<Draw> {
        (0..n)
            .map(|_| Draw {
                frame: rng.random_range(0..self.frames),
                hr_y: self.ys[rng.random_range(0..self.ys.len())],
                hr_x: self.xs[rng.random_range(0..self.xs.len())],
                cell: None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Sampler {
    Uniform(UniformSampler),
    Loss(LossSampler),
}

impl Sampler {
    pub fn new(kind: SamplerKind, frames: usize, hr_h: usize, hr_w: usize, patch: usize, scale: usize) -> Self {
        match kind {
            SamplerKind::Uniform => Self::Uniform(UniformSampler::new(frames, hr_h, hr_w, patch, scale)),
            SamplerKind::Loss => Self::Loss(LossSampler::new(frames, hr_h, hr_w, patch, scale)),
        }
    }

    pub fn draw_batch(&self, rng: &mut impl Rng, n: usize) -> Vec<Draw> {
        match self {
            Self::Uniform(s) => s.draw_batch(rng, n),
            Self::Loss(s) => s.draw_batch(rng, n),
        }
    }

    pub fn observe(&mut self, draw: &Draw, loss: f64) {
        if let Self::Loss(s) = self {
            s.observe(draw, loss);
        }
    }
}
