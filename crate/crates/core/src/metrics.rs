//! Image fidelity metrics and the delivery cost model.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model_io::{quantize_8bit, ModelContainer};
use crate::tensor::{bicubic_resize, clamp01, Scale, Tensor4, TensorError};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Bytes per megabyte in cost reports.
pub const MB: f64 = 1e6;

fn mse(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Result<f64, TensorError> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// PSNR in dB over all channels after clamping both images to `[0, 1]`.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Result<f64, TensorError> {
    let e = mse(&clamp01(a), &clamp01(b))?;
    Ok(if e == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / e).log10() })
}

/// PSNR after snapping both images to 8-bit levels.
pub fn psnr_8bit(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Result<f64, TensorError> {
    psnr(&quantize_8bit(a), &quantize_8bit(b))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Valid-region separable Gaussian filter of a row-major plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn gray(t: &Tensor4<f32>, b: usize) -> Vec<f64> {
    let s = t.shape();
    (0..s.plane())
        .map(|i| (0..s.c).map(|c| t.plane(b, c)[i] as f64).sum::<f64>() / s.c as f64)
        .collect()
}

/// Mean SSIM of the grayscale (channel mean) images, averaged over items.
/// Only windows fully inside the image contribute.
pub fn ssim(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Result<f64, TensorError> {
    a.check_same_shape(b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(TensorError::TooSmall {
            shape: s,
            kernel: SSIM_WINDOW,
            padding: 0,
        });
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for item in 0..s.b {
        let x = gray(a, item);
        let y = gray(b, item);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, s.h, s.w, &g));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / s.b as f64)
}

/// `MSE(lr, bicubic(sr, 1/s)) × 10`, i.e. in units of 10⁻¹.
pub fn consistency(lr: &Tensor4<f32>, sr: &Tensor4<f32>, scale: u32) -> Result<f64> {
    let (l, h) = (lr.shape(), sr.shape());
    let expected = [l.b, l.c, l.h * scale as usize, l.w * scale as usize];
    if h.to_array() != expected {
        return Err(TensorError::ShapeMismatch {
            lhs: h,
            rhs: expected.into(),
        }
        .into());
    }
    let down = if scale == 1 {
        sr.clone()
    } else {
        bicubic_resize(sr, Scale::down(scale)?)?
    };
    Ok(mse(lr, &down)? * 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostScheme {
    /// One model per chunk: Σ(S_i + L_i).
    PerChunkModels,
    /// One model for the video: S + ΣL_i.
    SharedModel,
    /// One model plus a prompt per chunk: S + Σ(L_i + T_i).
    SharedModelTvp,
}

impl fmt::Display for CostScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerChunkModels => "per-chunk-models",
            Self::SharedModel => "shared-model",
            Self::SharedModelTvp => "shared-model+tvp",
        })
    }
}

/// Delivery sizes in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub scheme: CostScheme,
    pub chunks: usize,
    /// L_i per chunk.
    pub lr_bytes: Vec<u64>,
    /// S_i per chunk for per-chunk models, a single S otherwise.
    pub model_bytes: Vec<u64>,
    /// T_i per chunk; all zero when the scheme has no prompts.
    pub tvp_bytes: Vec<u64>,
}

impl CostReport {
    pub fn new(scheme: CostScheme, lr_bytes: Vec<u64>, model_bytes: Vec<u64>, tvp_bytes: Vec<u64>) -> Result<Self> {
        let n = lr_bytes.len();
        if n == 0 {
            return Err(Error::InvalidConfig("a cost report needs at least one chunk".into()));
        }
        let models_ok = match scheme {
            CostScheme::PerChunkModels => model_bytes.len() == n,
            _ => model_bytes.len() == 1,
        };
        if !models_ok {
            return Err(Error::InvalidConfig(format!(
                "{scheme} with {n} chunks cannot use {} model sizes",
                model_bytes.len()
            )));
        }
        let tvp_bytes = match scheme {
            CostScheme::SharedModelTvp if tvp_bytes.len() == n => tvp_bytes,
            CostScheme::SharedModelTvp => {
                return Err(Error::InvalidConfig(format!(
                    "{n} chunks but {} prompt sizes",
                    tvp_bytes.len()
                )))
            }
            _ => vec![0; n],
        };
        Ok(Self {
            scheme,
            chunks: n,
            lr_bytes,
            model_bytes,
            tvp_bytes,
        })
    }

    pub fn lr_total(&self) -> u64 {
        self.lr_bytes.iter().sum()
    }

    /// Everything that is not LR video: models plus prompts.
    pub fn side_total(&self) -> u64 {
        self.model_bytes.iter().sum::<u64>() + self.tvp_bytes.iter().sum::<u64>()
    }

    pub fn total(&self) -> u64 {
        self.lr_total() + self.side_total()
    }

    /// `"LR+MODEL (TOTAL)"` in megabytes, two decimals.
    pub fn render(&self) -> String {
        format!(
            "{:.2}+{:.2} ({:.2})",
            self.lr_total() as f64 / MB,
            self.side_total() as f64 / MB,
            self.total() as f64 / MB
        )
    }
}

/// Per-chunk LR sizes supplied from outside, e.g. encoded bitstream sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeOverride {
    pub lr_bytes: Vec<u64>,
}

pub fn file_size(path: &Path) -> Result<u64> {
    let meta = std::fs::metadata(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(meta.len())
}

/// Files making up one delivery.
#[derive(Debug, Clone, Default)]
pub struct DeliveryFiles {
    /// LR frame files of each chunk.
    pub chunk_frames: Vec<Vec<PathBuf>>,
    /// One shared container, or one container per chunk.
    pub models: Vec<PathBuf>,
    pub size_override: Option<SizeOverride>,
}

/// Measures the files and builds the report. Prompt bytes `T_i` are read
/// from the containers; the model size `S` is the container size minus its
/// prompt bytes.
pub fn cost_report(files: &DeliveryFiles, scheme: CostScheme) -> Result<CostReport> {
    let n = files.chunk_frames.len();
    let lr_bytes = match &files.size_override {
        Some(o) if o.lr_bytes.len() != n => {
            return Err(Error::InvalidConfig(format!(
                "size override lists {} chunks, delivery has {n}",
                o.lr_bytes.len()
            )))
        }
        Some(o) => o.lr_bytes.clone(),
        None => files
            .chunk_frames
            .iter()
            .map(|frames| frames.iter().map(|p| file_size(p)).sum::<Result<u64>>())
            .collect::<Result<Vec<_>>>()?,
    };
    let mut model_bytes = Vec::new();
    let mut tvp_bytes = vec![0u64; n];
    for path in &files.models {
        let size = file_size(path)?;
        let container = ModelContainer::load(path)?;
        let prompts = container.prompt_bytes();
        let t: u64 = prompts.iter().map(|(_, b)| b).sum();
        for (chunk, b) in prompts {
            if let Some(slot) = tvp_bytes.get_mut(chunk) {
                *slot += b;
            }
        }
        model_bytes.push(size - t);
    }
    if scheme == CostScheme::PerChunkModels && model_bytes.len() == 1 && n > 1 {
        // the same architecture trained once per chunk
        model_bytes = vec![model_bytes[0]; n];
    }
    CostReport::new(scheme, lr_bytes, model_bytes, tvp_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, shape: [usize; 4]) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random(1, [1, 3, 8, 8]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        let lo = Tensor4::full([1, 3, 8, 8], 128.0f32 / 255.0);
        let hi = Tensor4::full([1, 3, 8, 8], 129.0f32 / 255.0);
        let expected = 20.0 * 255f64.log10();
        assert!((psnr(&lo, &hi).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 48.13).abs() < 0.005);

        let z = Tensor4::full([1, 3, 4, 4], 0.2f32);
        let off = Tensor4::full([1, 3, 4, 4], 0.3f32);
        assert!((psnr(&z, &off).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn psnr_symmetric_and_offset_law() {
        let a = random(2, [1, 3, 10, 10]).map(|v| 0.2 + 0.5 * v);
        let b = random(3, [1, 3, 10, 10]);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        for c in [0.01f32, 0.05, 0.2] {
            let shifted = a.map(|v| v + c);
            let expected = -20.0 * (c as f64).log10();
            assert!((psnr(&a, &shifted).unwrap() - expected).abs() < 1e-3);
        }
        assert!(psnr(&a, &random(4, [1, 3, 10, 9])).is_err());
    }

    #[test]
    fn psnr_clamps_inputs() {
        let a = Tensor4::full([1, 3, 2, 2], 1.0f32);
        let b = Tensor4::full([1, 3, 2, 2], 1.7f32);
        assert_eq!(psnr(&a, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn quantized_psnr_snaps_levels() {
        let a = Tensor4::full([1, 3, 4, 4], 0.5001f32);
        let b = Tensor4::full([1, 3, 4, 4], 0.5002f32);
        assert_eq!(psnr_8bit(&a, &b).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b).unwrap().is_finite());
    }

    /// SSIM straight from the definition: explicit 2-D window sums at every
    /// valid position.
    fn ssim_oracle(a: &Tensor4<f32>, b: &Tensor4<f32>) -> f64 {
        let s = a.shape();
        let mut w2 = [[0.0f64; 11]; 11];
        let mut total = 0.0;
        for (i, row) in w2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let g = |t: &Tensor4<f32>, y: usize, x: usize| {
            (t.at(0, 0, y, x) as f64 + t.at(0, 1, y, x) as f64 + t.at(0, 2, y, x) as f64) / 3.0
        };
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=s.h - 11 {
            for x0 in 0..=s.w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = w2[i][j] / total;
                        mx += w * g(a, y0 + i, x0 + j);
                        my += w * g(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = w2[i][j] / total;
                        let dx = g(a, y0 + i, x0 + j) - mx;
                        let dy = g(b, y0 + i, x0 + j) - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cov += w * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula() {
        for seed in 0..3 {
            let a = random(10 + seed, [1, 3, 17, 14]);
            let b = a.map(|v| v * 0.7 + 0.1);
            let b = crate::tensor::add(&b, &random(20 + seed, [1, 3, 17, 14]).map(|v| 0.2 * v)).unwrap();
            let fast = ssim(&a, &b).unwrap();
            assert!((fast - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_shift() {
        let a = random(30, [1, 3, 16, 16]).map(|v| 0.2 + 0.5 * v);
        let b = random(31, [1, 3, 16, 16]).map(|v| 0.2 + 0.5 * v);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let c = 0.15;
        let shifted = (ssim(&a.map(|v| v + c), &b.map(|v| v + c)).unwrap() - ssim(&a, &b).unwrap()).abs();
        // only the luminance term sees the shift
        assert!(shifted < 0.05);
        assert!(ssim(&random(32, [1, 3, 10, 16]), &random(33, [1, 3, 10, 16])).is_err());
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        let a = Tensor4::from_fn([1, 3, 22, 22], |_, _, y, x| ((y / 2 + x / 3) % 2) as f32);
        let inv = a.map(|v| 1.0 - v);
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.0);
        assert!((s - ssim_oracle(&a, &inv)).abs() < 1e-6);
        // on a window of half ones half zeros the mean is 0.5 for both, so
        // the luminance term is 1 and the structure term is
        // (−2σ² + C2)/(2σ² + C2) with σ² = 0.25
        let cs = (-0.5 + 0.0009) / (0.5 + 0.0009);
        assert!(cs < -0.99);
    }

    #[test]
    fn consistency_cases() {
        let lr = random(40, [1, 3, 8, 8]);
        assert_eq!(consistency(&lr, &lr, 1).unwrap(), 0.0);
        // white noise is the worst case for the round trip; use smooth content
        let lr = Tensor4::from_fn([1, 3, 16, 16], |_, c, y, x| {
            0.5 + 0.3 * ((0.3 * y as f32 + 0.2 * x as f32 + c as f32).sin())
        });
        let up = bicubic_resize(&lr, Scale::up(2).unwrap()).unwrap();
        let base = consistency(&lr, &up, 2).unwrap();
        assert!(base <= 1e-2, "{base}");
        let offset = consistency(&lr, &up.map(|v| v + 0.1), 2).unwrap();
        // bicubic weights sum to one, so the offset passes straight through
        let down = bicubic_resize(&up, Scale::down(2).unwrap()).unwrap();
        let resid = crate::tensor::sub(&lr, &down).unwrap();
        let m = resid.data().iter().map(|&r| ((r - 0.1) as f64).powi(2)).sum::<f64>() / resid.len() as f64;
        assert!((offset - 10.0 * m).abs() < 1e-5);
        assert!((offset - 0.1).abs() < 0.02);
        assert!(consistency(&lr, &up, 3).is_err());
    }

    #[test]
    fn table_format() {
        let r = CostReport::new(CostScheme::SharedModel, vec![3_620_000], vec![270_000], vec![]).unwrap();
        assert_eq!(r.render(), "3.62+0.27 (3.89)");
    }

    #[test]
    fn cost_arithmetic() {
        let lr: Vec<u64> = (0..9).map(|i| 100_000 + 1_000 * i).collect();
        let s = 50_000u64;
        let t: Vec<u64> = vec![27_648; 9];
        let shared = CostReport::new(CostScheme::SharedModel, lr.clone(), vec![s], vec![]).unwrap();
        let tvp = CostReport::new(CostScheme::SharedModelTvp, lr.clone(), vec![s], t.clone()).unwrap();
        let per = CostReport::new(CostScheme::PerChunkModels, lr.clone(), vec![s; 9], vec![]).unwrap();
        let l: u64 = lr.iter().sum();
        assert_eq!(shared.total(), s + l);
        assert_eq!(tvp.total(), s + lr.iter().zip(&t).map(|(a, b)| a + b).sum::<u64>());
        assert_eq!(per.total(), lr.iter().map(|li| s + li).sum::<u64>());
        assert_eq!(per.total() - shared.total(), 8 * s);
        assert!(shared.total() < per.total());

        let one = CostReport::new(CostScheme::PerChunkModels, vec![10], vec![5], vec![]).unwrap();
        let one_shared = CostReport::new(CostScheme::SharedModel, vec![10], vec![5], vec![]).unwrap();
        assert_eq!(one.total(), one_shared.total());

        assert!(CostReport::new(CostScheme::PerChunkModels, lr.clone(), vec![s], vec![]).is_err());
        assert!(CostReport::new(CostScheme::SharedModelTvp, lr, vec![s], vec![1]).is_err());
    }

    #[test]
    fn missing_files_are_named() {
        let files = DeliveryFiles {
            chunk_frames: vec![vec![PathBuf::from("/nonexistent/frame_000000.ppm")]],
            models: vec![],
            size_override: None,
        };
        match cost_report(&files, CostScheme::SharedModel) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("frame_000000.ppm")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_from_files_separates_prompt_bytes() {
        use crate::model_io::{ModelKind, TVP_PREFIX};
        use crate::repcam::BackboneConfig;
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Vec<PathBuf>> = (0..3)
            .map(|k| {
                let p = dir.path().join(format!("lr{k}.ppm"));
                std::fs::write(&p, vec![0u8; 1000 + k]).unwrap();
                vec![p]
            })
            .collect();
        let named = (0..3)
            .map(|k| (format!("{TVP_PREFIX}{k}"), Tensor4::zeros([1, 3, 2, 2])))
            .chain([("head.weight".to_string(), Tensor4::zeros([4, 3, 3, 3]))])
            .collect();
        let container = ModelContainer::new(ModelKind::Fused, BackboneConfig::default(), 3, None, named);
        let model = dir.path().join("model.rcam");
        container.save(&model).unwrap();
        let size = std::fs::metadata(&model).unwrap().len();
        let files = DeliveryFiles {
            chunk_frames: frames,
            models: vec![model],
            size_override: None,
        };
        let r = cost_report(&files, CostScheme::SharedModelTvp).unwrap();
        assert_eq!(r.lr_bytes, vec![1000, 1001, 1002]);
        assert_eq!(r.tvp_bytes, vec![48, 48, 48]);
        assert_eq!(r.model_bytes, vec![size - 144]);
        assert_eq!(r.total(), 3003 + size);

        let per = cost_report(&files, CostScheme::PerChunkModels).unwrap();
        assert_eq!(per.model_bytes.len(), 3);

        let overridden = DeliveryFiles {
            size_override: Some(SizeOverride {
                lr_bytes: vec![1, 2, 3],
            }),
            ..files
        };
        assert_eq!(cost_report(&overridden, CostScheme::SharedModel).unwrap().lr_total(), 6);
    }
}
