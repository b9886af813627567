use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::sampler::{aligned_positions, Sampler, SamplerKind};
use super::video::ChunkedVideo;
use crate::fuse::FusedNet;
use crate::grad::Tape;
use crate::metrics::psnr;
use crate::repcam::{BackboneConfig, ForwardRoute, RepCamNet};
use crate::tensor::{bicubic_resize, clamp01, Scale, Tensor4};
use crate::tvp::{apply_tvp, Tvp, DEFAULT_PROMPT_SIZE};
use crate::{Error, NumericDiagnostics, Result};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    pub chunks: usize,
    /// Edge of the square per-chunk prompt in LR pixels; `None` trains
    /// without prompts.
    pub tvp_size: Option<usize>,
    /// HR patch edge.
    pub patch_size: usize,
    pub batch_size: usize,
    /// Total optimizer steps. Ignored when `epochs` is set.
    pub iterations: u64,
    pub epochs: Option<u64>,
    pub learning_rate: f64,
    pub decay_epoch: u64,
    pub decay_factor: f64,
    pub adam: AdamConfig,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub route: ForwardRoute,
    /// Every `eval_stride`-th frame is scored after each epoch.
    pub eval_stride: usize,
    /// Iterations at which the full-frame training loss is recorded; 0 is
    /// before the first step.
    pub checkpoints: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            chunks: 9,
            tvp_size: Some(DEFAULT_PROMPT_SIZE),
            patch_size: 48,
            batch_size: 64,
            iterations: 2000,
            epochs: None,
            learning_rate: 5e-5,
            decay_epoch: 200,
            decay_factor: 0.5,
            adam: AdamConfig::default(),
            sampler: SamplerKind::Loss,
            seed: 0,
            route: ForwardRoute::Reparameterized,
            eval_stride: 10,
            checkpoints: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Optimizer steps in one pass over all aligned patch positions.
    pub fn epoch_len(&self, video: &ChunkedVideo) -> u64 {
        let (h, w) = video.hr_dims();
        let s = video.scale as usize;
        let positions = video.frames()
            * aligned_positions(h, self.patch_size, s).len()
            * aligned_positions(w, self.patch_size, s).len();
        (positions as u64).div_ceil(self.batch_size as u64).max(1)
    }

    pub fn total_iterations(&self, video: &ChunkedVideo) -> u64 {
        match self.epochs {
            Some(e) => e * self.epoch_len(video),
            None => self.iterations,
        }
    }

    pub fn learning_rate_at(&self, iteration: u64, epoch_len: u64) -> f64 {
        if iteration / epoch_len >= self.decay_epoch {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }

    fn validate(&self, video: &ChunkedVideo) -> Result<()> {
        self.backbone.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if video.lr.is_empty() {
            return bad("video has no LR frames".into());
        }
        if video.scale != self.backbone.scale {
            return bad(format!("video scale {} but network scale {}", video.scale, self.backbone.scale));
        }
        if video.chunks() != self.chunks {
            return bad(format!("video has {} chunks, config says {}", video.chunks(), self.chunks));
        }
        if self.batch_size == 0 || self.eval_stride == 0 {
            return bad("batch size and eval stride must be positive".into());
        }
        let s = self.backbone.scale as usize;
        let (h, w) = video.hr_dims();
        if self.patch_size == 0 || self.patch_size % s != 0 || self.patch_size > h || self.patch_size > w {
            return bad(format!(
                "patch size {} must be a positive multiple of {s} no larger than the {h}x{w} frames",
                self.patch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Anything that maps an LR frame batch to its SR estimate (unclamped).
pub trait SuperResolve {
    fn super_resolve(&self, lr: &Tensor4<f32>) -> Result<Tensor4<f32>>;
    fn scale(&self) -> u32;
}

impl SuperResolve for RepCamNet<f32> {
    fn super_resolve(&self, lr: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        self.sr_forward(lr)
    }

    fn scale(&self) -> u32 {
        self.config.scale
    }
}

impl SuperResolve for FusedNet {
    fn super_resolve(&self, lr: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        self.sr_forward(lr)
    }

    fn scale(&self) -> u32 {
        self.config.scale
    }
}

/// Prompts the frame with `tvp` (if any) and super-resolves it. Unclamped.
pub fn restore_frame(model: &dyn SuperResolve, lr: &Tensor4<f32>, tvp: Option<&Tvp>) -> Result<Tensor4<f32>> {
    match tvp {
        Some(t) => model.super_resolve(&apply_tvp(lr, t)?),
        None => model.super_resolve(lr),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Mean absolute error of the unclamped SR output.
    pub l1: f64,
    /// Mean per-frame PSNR of the clamped SR output.
    pub psnr: f64,
    /// Mean per-frame PSNR of plain bicubic upscaling.
    pub bicubic_psnr: f64,
    pub frames: usize,
}

/// Scores whole frames. `tvps[k]` prompts chunk `k`; pass an empty slice
/// for none.
pub fn evaluate(model: &dyn SuperResolve, tvps: &[Tvp], video: &ChunkedVideo, frames: &[usize]) -> Result<EvalStats> {
    let up = Scale::up(model.scale())?;
    let (mut l1, mut p, mut bp) = (0.0, 0.0, 0.0);
    for &f in frames {
        let tvp = tvps.get(video.chunk_of(f));
        let sr = restore_frame(model, &video.lr[f], tvp)?;
        let hr = &video.hr[f];
        l1 += sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / sr.len() as f64;
        p += psnr(&clamp01(&sr), hr)?;
        bp += psnr(&clamp01(&bicubic_resize(&video.lr[f], up)?), hr)?;
    }
    let n = frames.len().max(1) as f64;
    Ok(EvalStats {
        l1: l1 / n,
        psnr: p / n,
        bicubic_psnr: bp / n,
        frames: frames.len(),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based; the last record may cover a partial epoch.
    pub epoch: u64,
    pub iteration: u64,
    /// Mean batch L1 over the epoch.
    pub loss: f64,
    /// Mean PSNR on the held-out frame sample.
    pub psnr_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub stats: EvalStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: RepCamNet<f32>,
    pub tvps: Vec<Tvp>,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<Checkpoint>,
    pub iterations: u64,
}

/// Fresh network and zero prompts for `config`.
pub fn initial_state(config: &TrainConfig, video: &ChunkedVideo) -> Result<(RepCamNet<f32>, Vec<Tvp>)> {
    let net = RepCamNet::build(config.backbone, config.seed)?;
    let tvps = match config.tvp_size {
        Some(s) => {
            let (h, w) = video.lr_dims();
            (0..config.chunks)
                .map(|k| {
                    let t = Tvp::zeros(k, s, s);
                    t.offsets(h, w)?;
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    Ok((net, tvps))
}

pub fn train_from_scratch(video: &ChunkedVideo, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(video)?;
    let (net, tvps) = initial_state(config, video)?;
    train(net, tvps, video, config)
}

fn grad_norm(t: Option<&Tensor4<f32>>) -> f64 {
    t.map_or(0.0, |g| g.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt())
}

/// Jointly optimizes the network and the per-chunk prompts with Adam on
/// the L1 loss of SR patches.
pub fn train(mut net: RepCamNet<f32>, mut tvps: Vec<Tvp>, video: &ChunkedVideo, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(video)?;
    if net.config != config.backbone {
        return Err(Error::InvalidConfig("network does not match the configured backbone".into()));
    }
    if config.tvp_size.is_some() && tvps.len() != video.chunks() {
        return Err(Error::InvalidConfig(format!(
            "{} prompts for {} chunks",
            tvps.len(),
            video.chunks()
        )));
    }
    let (lr_h, lr_w) = video.lr_dims();
    for t in &tvps {
        t.offsets(lr_h, lr_w)?;
    }
    let s = config.backbone.scale as usize;
    let (hr_h, hr_w) = video.hr_dims();
    let epoch_len = config.epoch_len(video);
    let total = config.total_iterations(video);
    let eval_frames: Vec<usize> = (0..video.frames()).step_by(config.eval_stride).collect();
    let all_frames: Vec<usize> = (0..video.frames()).collect();

    let mut sampler = Sampler::new(config.sampler, video.frames(), hr_h, hr_w, config.patch_size, s);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let names: Vec<String> = net
        .param_names()
        .into_iter()
        .chain(tvps.iter().map(|t| format!("tvp.{}", t.chunk)))
        .collect();
    let sizes: Vec<usize> = net
        .params()
        .iter()
        .map(|p| p.len())
        .chain(tvps.iter().map(Tvp::param_count))
        .collect();
    let mut adam = Adam::new(config.adam, sizes);

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let (mut epoch_loss, mut epoch_steps) = (0.0f64, 0u64);
    let lr_patch = config.patch_size / s;

    for it in 0..=total {
        if config.checkpoints.contains(&it) {
            checkpoints.push(Checkpoint {
                iteration: it,
                stats: evaluate(&net, &tvps, video, &all_frames)?,
            });
        }
        if it == total {
            break;
        }
        let lr_rate = config.learning_rate_at(it, epoch_len);
        let draws = sampler.draw_batch(&mut rng, config.batch_size);
        let patches: Vec<_> = draws
            .iter()
            .map(|d| video.patch(d.frame, d.hr_y, d.hr_x, config.patch_size))
            .collect();
        let lr_batch = Tensor4::stack(&patches.iter().map(|p| p.lr.clone()).collect::<Vec<_>>())?;
        let hr_batch = Tensor4::stack(&patches.iter().map(|p| p.hr.clone()).collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let param_ids = net.register(&mut tape);
        let tvp_ids: Vec<_> = tvps.iter().map(|t| tape.leaf(t.values.clone())).collect();
        let mut input = tape.constant(lr_batch);
        if !tvps.is_empty() {
            let slots = patches
                .iter()
                .map(|p| {
                    let t = &tvps[p.chunk];
                    t.slot_for_patch(tvp_ids[p.chunk], lr_h, lr_w, p.hr_y / s, p.hr_x / s).map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            input = tape.add_prompts(input, slots)?;
        }
        let out = net.taped_forward(&mut tape, &param_ids, input, config.route)?;
        let target = tape.constant(hr_batch);
        let loss_id = tape.l1_loss(out, target)?;
        let loss = tape.value(loss_id).data()[0] as f64;
        let mut grads = tape.backward(loss_id)?;

        let all_ids: Vec<_> = param_ids.iter().chain(&tvp_ids).copied().collect();
        if !loss.is_finite() {
            let grad_norms = names
                .iter()
                .zip(&all_ids)
                .map(|(n, id)| (n.clone(), grad_norm(grads.get(*id))))
                .collect();
            return Err(Error::NumericFailure(Box::new(NumericDiagnostics {
                iteration: it,
                loss,
                learning_rate: lr_rate,
                grad_norms,
            })));
        }

        {
            let out_v = tape.value(out);
            let tgt_v = tape.value(target);
            let per_item = lr_patch * lr_patch * 3 * s * s;
            for (b, d) in draws.iter().enumerate() {
                let item_loss = out_v
                    .item(b)
                    .iter()
                    .zip(tgt_v.item(b))
                    .map(|(a, t)| (a - t).abs() as f64)
                    .sum::<f64>()
                    / per_item as f64;
                sampler.observe(d, item_loss);
            }
        }

        let n_params = param_ids.len();
        for (i, p) in net.params_mut().into_iter().enumerate() {
            if let Some(g) = grads.take(param_ids[i]) {
                adam.step(i, p, &g, lr_rate);
            }
        }
        for (k, t) in tvps.iter_mut().enumerate() {
            if let Some(g) = grads.take(tvp_ids[k]) {
                adam.step(n_params + k, &mut t.values, &g, lr_rate);
            }
        }

        epoch_loss += loss;
        epoch_steps += 1;
        let done = it + 1;
        if done % epoch_len == 0 || done == total {
            let stats = evaluate(&net, &tvps, video, &eval_frames)?;
            let record = EpochLog {
                epoch: done.div_ceil(epoch_len),
                iteration: done,
                loss: epoch_loss / epoch_steps as f64,
                psnr_eval: stats.psnr,
            };
            log::info!(
                "epoch {} iter {} loss {:.5} psnr_eval {:.3} dB",
                record.epoch,
                record.iteration,
                record.loss,
                record.psnr_eval
            );
            log.push(record);
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    }
    Ok(TrainOutcome {
        net,
        tvps,
        log,
        checkpoints,
        iterations: total,
    })
}

/// One independent single-branch model per chunk, each trained only on its
/// own frames with seed `seed + k`.
pub fn train_baseline_per_chunk(video: &ChunkedVideo, config: &TrainConfig) -> Result<Vec<TrainOutcome>> {
    (0..video.chunks())
        .map(|k| {
            let cfg = TrainConfig {
                backbone: config.backbone.single_branch(),
                chunks: 1,
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            train_from_scratch(&video.single_chunk(k), &cfg)
        })
        .collect()
}
