use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Element, Shape4, Tensor4, TensorError};

/// Cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = CUBIC_A`.
pub fn cubic_weight(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// A resize ratio `num / den` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scale {
    num: u32,
    den: u32,
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, TensorError> {
        let g = gcd(num, den).max(1);
        let s = Scale {
            num: num / g,
            den: den / g,
        };
        let ok = matches!((s.num, s.den), (1, 1) | (1, 2) | (1, 3) | (1, 4) | (2, 1) | (3, 1) | (4, 1));
        if !ok {
            return Err(TensorError::UnsupportedScale(s));
        }
        Ok(s)
    }

    pub fn up(factor: u32) -> Result<Self, TensorError> {
        Self::new(factor, 1)
    }

    pub fn down(factor: u32) -> Result<Self, TensorError> {
        Self::new(1, factor)
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn ratio(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    pub fn apply(&self, len: usize) -> Result<usize, TensorError> {
        let scaled = len * self.num as usize;
        if scaled % self.den as usize != 0 {
            return Err(TensorError::NonIntegralSize { len, scale: *self });
        }
        Ok(scaled / self.den as usize)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Four clamped taps per output sample along one axis.
struct AxisTaps {
    taps: Vec<[(usize, f64); 4]>,
}

impl AxisTaps {
    fn new(in_len: usize, out_len: usize, scale: Scale) -> Self {
        let inv = f64::from(scale.den) / f64::from(scale.num);
        let last = in_len as isize - 1;
        let taps = (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) * inv - 0.5;
                let base = src.floor();
                let t = src - base;
                let base = base as isize;
                let mut row = [(0usize, 0.0f64); 4];
                for (k, slot) in row.iter_mut().enumerate() {
                    let offset = k as isize - 1;
                    let idx = (base + offset).clamp(0, last) as usize;
                    *slot = (idx, cubic_weight(t - offset as f64));
                }
                row
            })
            .collect();
        Self { taps }
    }
}

fn resize_dims(s: Shape4, scale: Scale) -> Result<(usize, usize), TensorError> {
    Ok((scale.apply(s.h)?, scale.apply(s.w)?))
}

/// Separable bicubic resampling with half-pixel centers and clamped borders.
///
/// No antialiasing prefilter is applied when shrinking.
pub fn bicubic_resize<T: Element>(input: &Tensor4<T>, scale: Scale) -> Result<Tensor4<T>, TensorError> {
    let s = input.shape();
    let (oh, ow) = resize_dims(s, scale)?;
    if scale == Scale::ONE {
        return Ok(input.clone());
    }
    let wx = AxisTaps::new(s.w, ow, scale);
    let wy = AxisTaps::new(s.h, oh, scale);
    let mut out = Tensor4::zeros([s.b, s.c, oh, ow]);
    let mut rows = vec![0.0f64; s.h * ow];
    for b in 0..s.b {
        for c in 0..s.c {
            let plane = input.plane(b, c);
            for y in 0..s.h {
                let src = &plane[y * s.w..(y + 1) * s.w];
                for (x, taps) in wx.taps.iter().enumerate() {
                    rows[y * ow + x] = taps.iter().map(|&(i, w)| w * src[i].to_f64_lossy()).sum();
                }
            }
            let start = out.index(b, c, 0, 0);
            let dst = &mut out.data_mut()[start..start + oh * ow];
            for (y, taps) in wy.taps.iter().enumerate() {
                for x in 0..ow {
                    let v: f64 = taps.iter().map(|&(i, w)| w * rows[i * ow + x]).sum();
                    dst[y * ow + x] = T::from_f64_lossy(v);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bicubic_resize`]: maps an output gradient back to the input.
pub fn bicubic_resize_backward<T: Element>(
    grad_out: &Tensor4<T>,
    input_shape: Shape4,
    scale: Scale,
) -> Result<Tensor4<T>, TensorError> {
    let s = input_shape;
    let (oh, ow) = resize_dims(s, scale)?;
    let expect = Shape4::new(s.b, s.c, oh, ow);
    if grad_out.shape() != expect {
        return Err(TensorError::ShapeMismatch {
            lhs: expect,
            rhs: grad_out.shape(),
        });
    }
    if scale == Scale::ONE {
        return Ok(grad_out.clone());
    }
    let wx = AxisTaps::new(s.w, ow, scale);
    let wy = AxisTaps::new(s.h, oh, scale);
    let mut gin = Tensor4::zeros(s);
    let mut rows = vec![0.0f64; s.h * ow];
    let mut acc = vec![0.0f64; s.plane()];
    for b in 0..s.b {
        for c in 0..s.c {
            let g = grad_out.plane(b, c);
            rows.fill(0.0);
            for (y, taps) in wy.taps.iter().enumerate() {
                for &(i, w) in taps {
                    for x in 0..ow {
                        rows[i * ow + x] += w * g[y * ow + x].to_f64_lossy();
                    }
                }
            }
            acc.fill(0.0);
            for y in 0..s.h {
                for (x, taps) in wx.taps.iter().enumerate() {
                    let r = rows[y * ow + x];
                    for &(i, w) in taps {
                        acc[y * s.w + i] += w * r;
                    }
                }
            }
            let start = gin.index(b, c, 0, 0);
            for (d, &v) in gin.data_mut()[start..start + s.plane()].iter_mut().zip(&acc) {
                *d = T::from_f64_lossy(v);
            }
        }
    }
    Ok(gin)
}
