use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use repcam::fuse::{fuse_network, FusedNet};
use repcam::metrics::{self, cost_report as measure_cost, CostScheme, DeliveryFiles, SizeOverride};
use repcam::model_io::{
    generate_synthetic_video, quantize_8bit, read_frames, write_frame, write_frames, frame_file_name,
    ModelContainer, ModelKind, SynthConfig,
};
use repcam::pipeline::{
    chunk_video, crop_to_multiple, make_lr, restore_frame, train_baseline_per_chunk, train_from_scratch,
    SuperResolve, TrainConfig, TrainOutcome,
};
use repcam::repcam::{BackboneConfig, RepCamNet};
use repcam::tensor::Tensor4;
use repcam::tvp::Tvp;
use serde::Serialize;

use crate::args::*;
use crate::layout::{chunk_dir, ChunkIndex};
use crate::manifest::{manifest_path, sibling, RunManifest};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| repcam::Error::io(path, e).into())
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        frames: args.frames,
        height: args.height,
        width: args.width,
        motion: (args.motion_y, args.motion_x),
        seed: args.seed,
    };
    let frames = generate_synthetic_video(&cfg)?;
    let paths = write_frames(&args.out, &frames)?;
    log::info!("wrote {} frames of {}x{} to {}", paths.len(), args.height, args.width, args.out.display());
    let mut m = RunManifest::new("synth", &args);
    m.seed = Some(args.seed);
    m.outputs = paths;
    m.write(&manifest_path(&args.out, true))
}

pub fn chunk(args: ChunkArgs) -> Result<()> {
    let hr: Vec<_> = read_frames(&args.frames)?
        .iter()
        .map(|f| crop_to_multiple(f, args.scale))
        .collect();
    let video = make_lr(&chunk_video(hr, args.chunks)?, args.scale)?;
    let index = ChunkIndex {
        scale: args.scale,
        frames: video.frames(),
        bounds: video.bounds.iter().map(|r| (r.start, r.end)).collect(),
        hr_dims: video.hr_dims(),
        lr_dims: video.lr_dims(),
    };
    fs::create_dir_all(&args.out).map_err(|e| repcam::Error::io(&args.out, e))?;
    let mut outputs = Vec::new();
    for (k, range) in video.bounds.iter().enumerate() {
        outputs.extend(write_frames(&chunk_dir(&args.out, k), &video.lr[range.clone()])?);
    }
    index.write(&args.out)?;
    log::info!(
        "{} frames -> {} chunks of {}x{} LR frames in {}",
        index.frames,
        index.chunks(),
        index.lr_dims.0,
        index.lr_dims.1,
        args.out.display()
    );
    let mut m = RunManifest::new("chunk", &args);
    m.inputs = vec![args.frames.clone()];
    m.outputs = outputs;
    m.resolved = Some(serde_json::to_value(&index).expect("index serializes"));
    m.write(&manifest_path(&args.out, true))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        backbone: BackboneConfig {
            channels: a.channels,
            blocks: a.blocks,
            branches: a.branches,
            scale: a.scale,
            global_skip: !a.no_global_skip,
            merge: a.merge.into(),
        },
        chunks: a.chunks,
        tvp_size: (a.tvp_size > 0).then_some(a.tvp_size),
        patch_size: a.patch_size,
        batch_size: a.batch,
        iterations: a.iterations,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        decay_epoch: a.decay_epoch,
        decay_factor: a.decay_factor,
        sampler: a.sampler.into(),
        seed: a.seed,
        route: a.route.into(),
        eval_stride: a.eval_stride,
        ..TrainConfig::default()
    }
}

fn training_container(out: &TrainOutcome, config: &TrainConfig) -> ModelContainer {
    let mut named: Vec<_> = out
        .net
        .param_names()
        .into_iter()
        .zip(out.net.params().into_iter().cloned())
        .collect();
    named.extend(out.tvps.iter().map(|t| (format!("tvp.{}", t.chunk), t.values.clone())));
    ModelContainer::new(
        ModelKind::Training,
        out.net.config,
        out.net.config.branches,
        Some(config.clone()),
        named,
    )
}

fn numeric_failure(err: repcam::Error, out: &Path) -> CliError {
    match err {
        repcam::Error::NumericFailure(d) => {
            let dump = sibling(out, "diagnostics.json");
            let text = serde_json::to_string_pretty(&*d).expect("diagnostics serialize");
            if let Err(e) = fs::write(&dump, text) {
                return CliError::Core(repcam::Error::io(&dump, e));
            }
            CliError::Numeric {
                message: format!("training diverged: {d}"),
                dump,
            }
        }
        e => e.into(),
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let args = match &args.from_manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            if m.subcommand != "train" {
                return Err(CliError::Invalid(format!(
                    "{} records a `{}` run, not `train`",
                    path.display(),
                    m.subcommand
                )));
            }
            let mut replay: TrainArgs = serde_json::from_value(m.args)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            if args.out.is_some() {
                replay.out = args.out.clone();
            }
            replay
        }
        None => args,
    };
    let (Some(frames), Some(out)) = (args.frames.clone(), args.out.clone()) else {
        return Err(CliError::Usage("train needs --frames and --out".into()));
    };
    let config = train_config(&args);
    let hr: Vec<_> = read_frames(&frames)?
        .iter()
        .map(|f| crop_to_multiple(f, args.scale))
        .collect();
    let video = make_lr(&chunk_video(hr, args.chunks)?, args.scale)?;
    log::info!(
        "training on {} frames, {} chunks, {} iterations",
        video.frames(),
        video.chunks(),
        config.total_iterations(&video)
    );

    let mut outputs = Vec::new();
    if args.baseline_per_chunk {
        fs::create_dir_all(&out).map_err(|e| repcam::Error::io(&out, e))?;
        let models = train_baseline_per_chunk(&video, &config).map_err(|e| numeric_failure(e, &out.join("run")))?;
        for (k, model) in models.iter().enumerate() {
            let path = out.join(format!("model_{k:03}.rcam"));
            let cfg = TrainConfig {
                backbone: model.net.config,
                chunks: 1,
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            training_container(model, &cfg).save(&path)?;
            let log_path = sibling(&path, "log.jsonl");
            write_records(&log_path, &model.log)?;
            outputs.extend([path, log_path]);
        }
    } else {
        let model = train_from_scratch(&video, &config).map_err(|e| numeric_failure(e, &out))?;
        if let Some(last) = model.log.last() {
            log::info!("final loss {:.5}, held-out psnr {:.3} dB", last.loss, last.psnr_eval);
        }
        training_container(&model, &config).save(&out)?;
        let log_path = sibling(&out, "log.jsonl");
        write_records(&log_path, &model.log)?;
        outputs.extend([out.clone(), log_path]);
    }

    let mut m = RunManifest::new("train", &args);
    m.seed = Some(args.seed);
    m.inputs = vec![frames];
    m.outputs = outputs;
    m.resolved = Some(serde_json::to_value(&config).expect("config serializes"));
    m.write(&manifest_path(&out, args.baseline_per_chunk))
}

enum Model {
    Training(RepCamNet<f32>),
    Fused(FusedNet),
}

impl Model {
    fn as_sr(&self) -> &(dyn SuperResolve + Sync) {
        match self {
            Self::Training(n) => n,
            Self::Fused(n) => n,
        }
    }
}

fn load_model(path: &Path) -> Result<(ModelContainer, Model)> {
    let c = ModelContainer::load(path)?;
    let tensors = c.network_tensors();
    let model = match c.header.kind {
        ModelKind::Training => Model::Training(RepCamNet::from_params(c.header.backbone, tensors)?),
        ModelKind::Fused => Model::Fused(FusedNet::from_params(c.header.backbone, c.header.trained_branches, tensors)?),
    };
    Ok((c, model))
}

fn prompts_of(c: &ModelContainer) -> Vec<Tvp> {
    c.prompts()
        .into_iter()
        .map(|(chunk, values)| Tvp { chunk, values })
        .collect()
}

pub fn fuse(args: FuseArgs) -> Result<()> {
    let (c, model) = load_model(&args.model)?;
    let net = match model {
        Model::Training(n) => n,
        Model::Fused(_) => {
            return Err(CliError::Invalid(format!("{} is already fused", args.model.display())));
        }
    };
    let fused = fuse_network(&net)?;
    let before = net.param_count();
    let after = fused.param_count();
    println!("parameters before fusion: {before} ({} branches)", net.config.branches);
    println!("parameters after fusion:  {after} (single branch)");
    let mut named = fused.named_params();
    named.extend(prompts_of(&c).into_iter().map(|t| (format!("tvp.{}", t.chunk), t.values)));
    ModelContainer::new(
        ModelKind::Fused,
        fused.config,
        fused.trained_branches,
        c.header.train_config.clone(),
        named,
    )
    .save(&args.out)?;

    let mut m = RunManifest::new("fuse", &args);
    m.inputs = vec![args.model.clone()];
    m.outputs = vec![args.out.clone()];
    m.resolved = Some(serde_json::json!({ "params_before": before, "params_after": after }));
    m.write(&manifest_path(&args.out, false))
}

fn random_probes(n: usize, size: usize, seed: u64) -> Vec<(usize, Tensor4<f32>)> {
    // SplitMix64 keeps the probes independent of the library's generators.
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 40) as f32 / (1u64 << 24) as f32
    };
    (0..n)
        .map(|_| (0, Tensor4::from_fn([1, 3, size, size], |_, _, _, _| next())))
        .collect()
}

pub fn verify_fuse(args: VerifyFuseArgs) -> Result<()> {
    let (c, model) = load_model(&args.model)?;
    let Model::Training(net) = model else {
        return Err(CliError::Invalid(format!("{} is not a multi-branch model", args.model.display())));
    };
    let fused = match &args.fused {
        Some(path) => match load_model(path)?.1 {
            Model::Fused(f) => f,
            Model::Training(_) => {
                return Err(CliError::Invalid(format!("{} is not a fused model", path.display())));
            }
        },
        None => fuse_network(&net)?,
    };
    if fused.config != net.config.single_branch() {
        return Err(CliError::Verify(format!(
            "fused topology {:?} does not match the source {:?}",
            fused.config, net.config
        )));
    }
    let (probes, tvps) = match &args.lr_dir {
        Some(dir) => (ChunkIndex::load(dir)?.read_lr(dir)?, prompts_of(&c)),
        None => (random_probes(args.probes, args.probe_size, args.seed), Vec::new()),
    };
    let mut gap = 0.0f64;
    for (k, lr) in &probes {
        let tvp = tvps.iter().find(|t| t.chunk == *k);
        let a = restore_frame(&net, lr, tvp)?;
        let b = restore_frame(&fused, lr, tvp)?;
        gap = gap.max(a.max_abs_diff(&b).map_err(repcam::Error::from)? as f64);
    }
    let pass = gap <= args.tolerance;
    println!(
        "max |fused - multi-branch| = {gap:.3e} over {} probes (tolerance {:e}): {}",
        probes.len(),
        args.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Verify(format!("fusion gap {gap:e} exceeds tolerance {:e}", args.tolerance)))
    }
}

fn map_frames<T: Send, R: Send>(
    items: Vec<T>,
    parallel: bool,
    f: impl Fn(T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

pub fn infer(args: InferArgs) -> Result<()> {
    let (c, model) = load_model(&args.model)?;
    let index = ChunkIndex::load(&args.lr_dir)?;
    let sr_model = model.as_sr();
    if sr_model.scale() != index.scale {
        return Err(CliError::Invalid(format!(
            "model upscales by {} but the chunks were made at scale {}",
            sr_model.scale(),
            index.scale
        )));
    }
    let tvps = if args.no_tvp { Vec::new() } else { prompts_of(&c) };
    let frames: Vec<_> = index.read_lr(&args.lr_dir)?.into_iter().enumerate().collect();
    fs::create_dir_all(&args.out).map_err(|e| repcam::Error::io(&args.out, e))?;
    let outputs = map_frames(frames, args.parallel_frames, |(i, (k, lr))| {
        let sr = restore_frame(sr_model, &lr, tvps.iter().find(|t| t.chunk == k))?;
        let path = args.out.join(frame_file_name(i));
        write_frame(&path, &sr)?;
        Ok(path)
    })?;
    log::info!("wrote {} SR frames to {}", outputs.len(), args.out.display());

    let mut m = RunManifest::new("infer", &args);
    m.inputs = vec![args.model.clone(), args.lr_dir.clone()];
    m.outputs = outputs;
    m.write(&manifest_path(&args.out, true))
}

#[derive(Debug, Clone, Serialize)]
struct FrameScore {
    frame: usize,
    psnr: f64,
    ssim: f64,
    consistency: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct EvalSummary {
    summary: bool,
    frames: usize,
    psnr: f64,
    ssim: f64,
    consistency: Option<f64>,
    quantized: bool,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.3}")
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let sr = read_frames(&args.sr)?;
    let hr = read_frames(&args.hr)?;
    if sr.len() != hr.len() {
        return Err(CliError::Invalid(format!("{} SR frames but {} HR frames", sr.len(), hr.len())));
    }
    let lr: Option<Vec<_>> = match &args.lr_dir {
        Some(dir) => {
            let index = ChunkIndex::load(dir)?;
            Some(index.read_lr(dir)?.into_iter().map(|(_, f)| f).collect())
        }
        None => None,
    };
    if lr.as_ref().is_some_and(|l| l.len() != sr.len()) {
        return Err(CliError::Invalid("LR and SR frame counts differ".into()));
    }
    let jobs: Vec<_> = sr.into_iter().zip(hr).enumerate().collect();
    let scores = map_frames(jobs, args.parallel_frames, |(i, (s, h))| {
        let sh = s.shape();
        let hh = h.shape();
        if hh.h < sh.h || hh.w < sh.w {
            return Err(CliError::Invalid(format!("frame {i}: HR {hh} smaller than SR {sh}")));
        }
        // HR frames are cropped to a multiple of the scale before chunking
        let h = h.crop(0, 0, sh.h, sh.w);
        let (s, h) = if args.quantize_8bit {
            (quantize_8bit(&s), quantize_8bit(&h))
        } else {
            (s, h)
        };
        let consistency = match &lr {
            Some(l) => {
                let scale = (sh.h / l[i].shape().h) as u32;
                Some(metrics::consistency(&l[i], &s, scale)?)
            }
            None => None,
        };
        Ok(FrameScore {
            frame: i,
            psnr: metrics::psnr(&s, &h).map_err(repcam::Error::from)?,
            ssim: metrics::ssim(&s, &h).map_err(repcam::Error::from)?,
            consistency,
        })
    })?;
    let n = scores.len() as f64;
    let summary = EvalSummary {
        summary: true,
        frames: scores.len(),
        psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        consistency: lr.as_ref().map(|_| scores.iter().filter_map(|s| s.consistency).sum::<f64>() / n),
        quantized: args.quantize_8bit,
    };

    let mut out = std::io::stdout().lock();
    let cons = |c: Option<f64>| c.map_or("-".to_string(), |v| format!("{v:.5}"));
    let _ = writeln!(out, "{:>6}  {:>9}  {:>7}  {:>11}", "frame", "PSNR(dB)", "SSIM", "consistency");
    for s in &scores {
        let _ = writeln!(
            out,
            "{:>6}  {:>9}  {:>7.4}  {:>11}",
            s.frame,
            fmt_db(s.psnr),
            s.ssim,
            cons(s.consistency)
        );
    }
    let _ = writeln!(
        out,
        "{:>6}  {:>9}  {:>7.4}  {:>11}",
        "mean",
        fmt_db(summary.psnr),
        summary.ssim,
        cons(summary.consistency)
    );

    if let Some(path) = &args.records {
        let mut text = String::new();
        for s in &scores {
            text.push_str(&serde_json::to_string(s).expect("score serializes"));
            text.push('\n');
        }
        text.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        text.push('\n');
        write_text(path, &text)?;
        let mut m = RunManifest::new("eval", &args);
        m.inputs = [Some(args.sr.clone()), Some(args.hr.clone()), args.lr_dir.clone()]
            .into_iter()
            .flatten()
            .collect();
        m.outputs = vec![path.clone()];
        m.write(&manifest_path(path, false))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CostRecord {
    scheme: String,
    chunks: usize,
    lr_bytes: Vec<u64>,
    model_bytes: Vec<u64>,
    tvp_bytes: Vec<u64>,
    lr_mb: f64,
    side_mb: f64,
    total_mb: f64,
    rendered: String,
}

pub fn cost_report(args: CostReportArgs) -> Result<()> {
    let index = ChunkIndex::load(&args.lr_dir)?;
    let size_override = match &args.size_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|_| CliError::Usage(format!("size file {} not found", path.display())))?;
            Some(
                serde_json::from_str::<SizeOverride>(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let files = DeliveryFiles {
        chunk_frames: index.frame_files(&args.lr_dir)?,
        models: args.models.clone(),
        size_override,
    };
    let schemes: Vec<CostScheme> = match args.scheme {
        Some(s) => vec![s.into()],
        None if args.models.len() > 1 => vec![CostScheme::PerChunkModels],
        None => vec![CostScheme::PerChunkModels, CostScheme::SharedModel, CostScheme::SharedModelTvp],
    };
    if args.models.len() > 1 && schemes.iter().any(|s| *s != CostScheme::PerChunkModels) {
        return Err(CliError::Invalid("shared schemes take exactly one --model".into()));
    }
    let mb = |b: u64| b as f64 / 1e6;
    let mut records = Vec::new();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<18}  {:>6}  LR+MODEL (TOTAL) in MB", "scheme", "chunks");
    for scheme in schemes {
        let r = measure_cost(&files, scheme)?;
        let _ = writeln!(out, "{:<18}  {:>6}  {}", scheme.to_string(), r.chunks, r.render());
        records.push(CostRecord {
            scheme: scheme.to_string(),
            chunks: r.chunks,
            lr_mb: mb(r.lr_total()),
            side_mb: mb(r.side_total()),
            total_mb: mb(r.total()),
            rendered: r.render(),
            lr_bytes: r.lr_bytes,
            model_bytes: r.model_bytes,
            tvp_bytes: r.tvp_bytes,
        });
    }
    if let Some(path) = &args.records {
        write_records(path, &records)?;
        let mut m = RunManifest::new("cost-report", &args);
        m.inputs = std::iter::once(args.lr_dir.clone())
            .chain(args.models.iter().cloned())
            .chain(args.size_file.clone())
            .collect();
        m.outputs = vec![path.clone()];
        m.write(&manifest_path(path, false))?;
    }
    Ok(())
}
