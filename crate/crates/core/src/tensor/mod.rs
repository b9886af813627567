//! Dense rank-4 tensors and the array operations the rest of the crate is
//! built on.
//!
//! Everything is stored contiguously in row-major `(batch, channel, height,
//! width)` order. Operations are pure: they take tensors by reference and
//! return freshly allocated results.

mod conv;
mod elementwise;
mod resize;
mod shuffle;

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::{conv2d, conv2d_backward, pad_constant, ConvGrads, ConvKernel};
pub use resize::{bicubic_resize, bicubic_resize_backward, cubic_weight, Scale, CUBIC_A};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {lhs} vs {rhs}")]
    ShapeMismatch { lhs: Shape4, rhs: Shape4 },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape4, len: usize },
    #[error("kernel size {0} is not supported (odd sizes 1 and 3 only)")]
    KernelSize(usize),
    #[error("padding {padding} is invalid for kernel size {kernel}")]
    Padding { padding: usize, kernel: usize },
    #[error("pad values have length {actual}, expected one per input channel ({expected})")]
    PadValues { expected: usize, actual: usize },
    #[error("channel count {channels} is not divisible by {factor}")]
    NotDivisible { channels: usize, factor: usize },
    #[error("scale {0} is not one of 1/4, 1/3, 1/2, 2, 3, 4")]
    UnsupportedScale(Scale),
    #[error("{len} pixels scaled by {scale} is not an integer")]
    NonIntegralSize { len: usize, scale: Scale },
    #[error("input {shape} is too small for a {kernel}x{kernel} kernel with padding {padding}")]
    TooSmall {
        shape: Shape4,
        kernel: usize,
        padding: usize,
    },
}

/// Element type of a tensor.
///
/// Storage is `f32` throughout the pipeline; `f64` exists so that gradient
/// checks can run the exact same code paths at higher precision.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + Send + Sync + 'static
{
    /// `c = alpha * a·b + beta * c` on strided row-major matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows.saturating_sub(1) as isize * rs + cols.saturating_sub(1) as isize * cs)
                        as usize
                };
                assert!(k == 0 || extent(m, k, rsa, csa) < a.len());
                assert!(k == 0 || extent(k, n, rsb, csb) < b.len());
                assert!(extent(m, n, rsc, csc) < c.len());
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self { b, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.b, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.b {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// A `(1,1,1,1)` tensor holding `value`.
    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.to_array()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(b < self.shape.b && c < self.shape.c && y < self.shape.h && x < self.shape.w);
        ((b * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous view of one `(b, c)` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// Contiguous view of batch item `b`.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape.c * self.shape.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Sum accumulated in `f64` regardless of storage type.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }

    /// Copies the `(h, w)` window at `(y0, x0)` out of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        assert!(y0 + h <= self.shape.h && x0 + w <= self.shape.w, "crop out of bounds");
        Self::from_fn([self.shape.b, self.shape.c, h, w], |b, c, y, x| {
            self.at(b, c, y0 + y, x0 + x)
        })
    }

    /// Stacks tensors of identical `(c, h, w)` along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self, TensorError> {
        let first = items.first().expect("stack needs at least one tensor");
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut b = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(TensorError::ShapeMismatch {
                    lhs: s,
                    rhs: t.shape,
                });
            }
            data.extend_from_slice(&t.data);
            b += t.shape.b;
        }
        Ok(Self {
            shape: Shape4::new(b, s.c, s.h, s.w),
            data,
        })
    }

    /// Splits into single-item tensors along the batch axis.
    pub fn unstack(&self) -> Vec<Self> {
        (0..self.shape.b)
            .map(|b| Self {
                shape: Shape4::new(1, self.shape.c, self.shape.h, self.shape.w),
                data: self.item(b).to_vec(),
            })
            .collect()
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[Self]) -> Result<Self, TensorError> {
        let first = parts.first().expect("concat needs at least one tensor");
        let s = first.shape;
        for p in parts {
            if (p.shape.b, p.shape.h, p.shape.w) != (s.b, s.h, s.w) {
                return Err(TensorError::ShapeMismatch {
                    lhs: s,
                    rhs: p.shape,
                });
            }
        }
        let c_total = parts.iter().map(|p| p.shape.c).sum();
        let mut data = Vec::with_capacity(s.b * c_total * s.plane());
        for b in 0..s.b {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Ok(Self {
            shape: Shape4::new(s.b, c_total, s.h, s.w),
            data,
        })
    }
}

pub use elementwise::{add, clamp01, mul_scalar, relu, sub};
