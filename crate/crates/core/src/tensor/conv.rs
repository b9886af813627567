use super::{Element, Shape4, Tensor4, TensorError};

/// Weights `(out, in, k, k)` and bias `(out, 1, 1, 1)` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T = f32> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Element> ConvKernel<T> {
    pub fn new(weight: Tensor4<T>, bias: Tensor4<T>) -> Result<Self, TensorError> {
        let [o, _, kh, kw] = weight.dims();
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::KernelSize(kh.max(kw)));
        }
        if bias.dims() != [o, 1, 1, 1] {
            return Err(TensorError::ShapeMismatch {
                lhs: Shape4::new(o, 1, 1, 1),
                rhs: bias.shape(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self {
            weight: Tensor4::zeros([out_ch, in_ch, k, k]),
            bias: Tensor4::zeros([out_ch, 1, 1, 1]),
        }
    }

    /// 1×1 kernel mapping channel `i` to channel `i`.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels, 1);
        for c in 0..channels {
            k.weight.set(c, c, 0, 0, T::one());
        }
        k
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().b
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn size(&self) -> usize {
        self.weight.shape().h
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, u: usize, v: usize) -> T {
        self.weight.at(o, i, u, v)
    }

    #[inline]
    pub fn b(&self, o: usize) -> T {
        self.bias.data()[o]
    }

    pub fn cast<U: Element>(&self) -> ConvKernel<U> {
        ConvKernel {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

struct Geometry {
    in_shape: Shape4,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

fn geometry<T: Element>(
    input: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    padding: usize,
    pad_values: Option<&[T]>,
) -> Result<Geometry, TensorError> {
    let k = kernel.size();
    if k != 1 && k != 3 {
        return Err(TensorError::KernelSize(k));
    }
    let s = input.shape();
    if s.c != kernel.in_channels() {
        return Err(TensorError::ChannelMismatch {
            expected: kernel.in_channels(),
            actual: s.c,
        });
    }
    if padding != 0 && padding != (k - 1) / 2 {
        return Err(TensorError::Padding { padding, kernel: k });
    }
    if let Some(pv) = pad_values {
        if pv.len() != s.c {
            return Err(TensorError::PadValues {
                expected: s.c,
                actual: pv.len(),
            });
        }
    }
    if s.h + 2 * padding < k || s.w + 2 * padding < k {
        return Err(TensorError::TooSmall {
            shape: s,
            kernel: k,
            padding,
        });
    }
    Ok(Geometry {
        in_shape: s,
        k,
        pad: padding,
        out_h: s.h + 2 * padding - k + 1,
        out_w: s.w + 2 * padding - k + 1,
    })
}

/// Unfolds one batch item into a `(C·K·K, out_h·out_w)` column matrix.
fn im2col<T: Element>(g: &Geometry, item: &[T], pad_values: Option<&[T]>, col: &mut [T]) {
    let (h, w) = (g.in_shape.h, g.in_shape.w);
    let (oh, ow) = (g.out_h, g.out_w);
    let n = oh * ow;
    let mut row = 0;
    for c in 0..g.in_shape.c {
        let plane = &item[c * h * w..(c + 1) * h * w];
        let fill = pad_values.map_or(T::zero(), |p| p[c]);
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(fill);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // ix = ox + kx - pad; valid for ox in [lo, hi)
                    let lo = g.pad.saturating_sub(kx).min(ow);
                    let hi = (w + g.pad).saturating_sub(kx).min(ow).max(lo);
                    out_row[..lo].fill(fill);
                    out_row[hi..].fill(fill);
                    if hi > lo {
                        let start = lo + kx - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a column-matrix gradient back onto the input, dropping padded taps.
fn col2im<T: Element>(g: &Geometry, col: &[T], item: &mut [T]) {
    let (h, w) = (g.in_shape.h, g.in_shape.w);
    let (oh, ow) = (g.out_h, g.out_w);
    let n = oh * ow;
    let mut row = 0;
    for c in 0..g.in_shape.c {
        let plane = &mut item[c * h * w..(c + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let lo = g.pad.saturating_sub(kx).min(ow);
                    let hi = (w + g.pad).saturating_sub(kx).min(ow).max(lo);
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let start = lo + kx - g.pad;
                    for (d, &s) in dst[start..start + (hi - lo)]
                        .iter_mut()
                        .zip(&src[oy * ow + lo..oy * ow + hi])
                    {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 2-D convolution (cross-correlation, as in every DL framework).
///
/// Out-of-image taps read `pad_values[c]` for input channel `c`, or zero when
/// no pad values are given.
pub fn conv2d<T: Element>(
    input: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    padding: usize,
    pad_values: Option<&[T]>,
) -> Result<Tensor4<T>, TensorError> {
    let g = geometry(input, kernel, padding, pad_values)?;
    let c1 = kernel.out_channels();
    let ckk = g.in_shape.c * g.k * g.k;
    let n = g.out_h * g.out_w;
    let out_shape = Shape4::new(g.in_shape.b, c1, g.out_h, g.out_w);
    let mut out = Tensor4::zeros(out_shape);
    let direct = g.k == 1 && g.pad == 0;
    let mut col = if direct { Vec::new() } else { vec![T::zero(); ckk * n] };
    for b in 0..g.in_shape.b {
        let item = input.item(b);
        let cols: &[T] = if direct {
            item
        } else {
            im2col(&g, item, pad_values, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[b * c1 * n..(b + 1) * c1 * n];
        for (o, chunk) in dst.chunks_mut(n).enumerate() {
            chunk.fill(kernel.b(o));
        }
        T::gemm(
            c1,
            ckk,
            n,
            T::one(),
            kernel.weight.data(),
            ckk as isize,
            1,
            cols,
            n as isize,
            1,
            T::one(),
            dst,
            n as isize,
            1,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

/// Gradients of a [`conv2d`] call given the upstream gradient of its output.
/// Pad values are constants and receive no gradient.
pub fn conv2d_backward<T: Element>(
    input: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    padding: usize,
    pad_values: Option<&[T]>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let g = geometry(input, kernel, padding, pad_values)?;
    let c1 = kernel.out_channels();
    let ckk = g.in_shape.c * g.k * g.k;
    let n = g.out_h * g.out_w;
    let expect = Shape4::new(g.in_shape.b, c1, g.out_h, g.out_w);
    if grad_out.shape() != expect {
        return Err(TensorError::ShapeMismatch {
            lhs: expect,
            rhs: grad_out.shape(),
        });
    }
    let mut gin = Tensor4::zeros(g.in_shape);
    let mut gw = Tensor4::zeros(kernel.weight.shape());
    let mut gb = Tensor4::zeros(kernel.bias.shape());
    let direct = g.k == 1 && g.pad == 0;
    let mut col = vec![T::zero(); ckk * n];
    let mut dcol = vec![T::zero(); ckk * n];
    let item_len = g.in_shape.c * g.in_shape.plane();
    for b in 0..g.in_shape.b {
        let go = &grad_out.data()[b * c1 * n..(b + 1) * c1 * n];
        for (o, chunk) in go.chunks(n).enumerate() {
            let s = chunk.iter().fold(T::zero(), |a, &v| a + v);
            gb.data_mut()[o] = gb.data_mut()[o] + s;
        }
        let item = input.item(b);
        let cols: &[T] = if direct {
            item
        } else {
            im2col(&g, item, pad_values, &mut col);
            &col
        };
        // dW += dY · colᵀ
        T::gemm(
            c1,
            n,
            ckk,
            T::one(),
            go,
            n as isize,
            1,
            cols,
            1,
            n as isize,
            T::one(),
            gw.data_mut(),
            ckk as isize,
            1,
        );
        let gin_item = &mut gin.data_mut()[b * item_len..(b + 1) * item_len];
        // dcol = Wᵀ · dY
        if direct {
            T::gemm(
                ckk,
                c1,
                n,
                T::one(),
                kernel.weight.data(),
                1,
                ckk as isize,
                go,
                n as isize,
                1,
                T::zero(),
                gin_item,
                n as isize,
                1,
            );
        } else {
            T::gemm(
                ckk,
                c1,
                n,
                T::one(),
                kernel.weight.data(),
                1,
                ckk as isize,
                go,
                n as isize,
                1,
                T::zero(),
                &mut dcol,
                n as isize,
                1,
            );
            col2im(&g, &dcol, gin_item);
        }
    }
    Ok(ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    })
}

/// Surrounds every plane with a ring of width `pad` holding `values[c]`
/// (zero when `values` is `None`).
pub fn pad_constant<T: Element>(input: &Tensor4<T>, pad: usize, values: Option<&[T]>) -> Tensor4<T> {
    let s = input.shape();
    let (h, w) = (s.h + 2 * pad, s.w + 2 * pad);
    Tensor4::from_fn([s.b, s.c, h, w], |b, c, y, x| {
        if y >= pad && y < pad + s.h && x >= pad && x < pad + s.w {
            input.at(b, c, y - pad, x - pad)
        } else {
            values.map_or(T::zero(), |v| v[c])
        }
    })
}
