use super::{Element, Tensor4, TensorError};

/// Depth-to-space: `(B, C·r², H, W) -> (B, C, H·r, W·r)`.
///
/// Output pixel `(y·r + i, x·r + j)` of channel `c` comes from input channel
/// `c·r² + i·r + j` at `(y, x)`.
pub fn pixel_shuffle<T: Element>(input: &Tensor4<T>, r: usize) -> Result<Tensor4<T>, TensorError> {
    let s = input.shape();
    let rr = r * r;
    if r == 0 || s.c % rr != 0 {
        return Err(TensorError::NotDivisible {
            channels: s.c,
            factor: rr,
        });
    }
    let c = s.c / rr;
    Ok(Tensor4::from_fn([s.b, c, s.h * r, s.w * r], |b, ch, y, x| {
        input.at(b, ch * rr + (y % r) * r + x % r, y / r, x / r)
    }))
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(input: &Tensor4<T>, r: usize) -> Result<Tensor4<T>, TensorError> {
    let s = input.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(TensorError::NotDivisible {
            channels: s.h.min(s.w),
            factor: r,
        });
    }
    let rr = r * r;
    Ok(Tensor4::from_fn([s.b, s.c * rr, s.h / r, s.w / r], |b, ch, y, x| {
        let (c, sub) = (ch / rr, ch % rr);
        input.at(b, c, y * r + sub / r, x * r + sub % r)
    }))
}
