//! Direct 2-D cross-correlation kernels.
//!
//! The loop nest walks output rows and accumulates one kernel tap at a time
//! over a contiguous strip, so the inner loop is a plain `axpy` the compiler
//! vectorizes. Accumulation order is fixed: input channel, kernel row, kernel
//! column.

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], pad: usize) -> Result<Self> {
        let (n, c, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d input must be [C,H,W] or [N,C,H,W], got {input:?}"
                )))
            }
        };
        let [k, wc, kh, kw] = *weight else {
            return Err(Error::Shape(format!(
                "conv2d weight must be [K,C,kh,kw], got {weight:?}"
            )));
        };
        if wc != c {
            return Err(Error::Shape(format!(
                "conv2d weight expects {wc} input channels, input has {c}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv2d kernel {kh}x{kw} must be odd")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"
            )));
        }
        Ok(Geometry {
            n,
            c,
            h,
            w,
            k,
            kh,
            kw,
            pad,
            ho: h + 2 * pad - kh + 1,
            wo: w + 2 * pad - kw + 1,
        })
    }

    fn output_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.n, self.k, self.ho, self.wo]
        } else {
            vec![self.k, self.ho, self.wo]
        }
    }

    /// Output rows `y` for which input row `y + dy - pad` exists.
    fn rows(&self, dy: usize) -> std::ops::Range<usize> {
        let lo = self.pad.saturating_sub(dy);
        let hi = (self.h + self.pad).saturating_sub(dy).min(self.ho);
        lo..hi.max(lo)
    }

    fn cols(&self, dx: usize) -> std::ops::Range<usize> {
        let lo = self.pad.saturating_sub(dx);
        let hi = (self.w + self.pad).saturating_sub(dx).min(self.wo);
        lo..hi.max(lo)
    }
}

/// Cross-correlation of `input` with `weight` plus optional per-output-channel bias.
///
/// `input` is `[C,H,W]` or `[N,C,H,W]`; the output keeps the same rank.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.k] {
            return Err(Error::Shape(format!(
                "conv2d bias must be [{}], got {:?}",
                g.k,
                b.shape()
            )));
        }
    }
    let x = input.data();
    let wt = weight.data();
    let out_plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.k * out_plane];

    for n in 0..g.n {
        for k in 0..g.k {
            let dst = &mut out[(n * g.k + k) * out_plane..][..out_plane];
            if let Some(b) = bias {
                dst.fill(b.data()[k]);
            }
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                for dy in 0..g.kh {
                    let rows = g.rows(dy);
                    for dx in 0..g.kw {
                        let tap = wt[((k * g.c + c) * g.kh + dy) * g.kw + dx];
                        let cols = g.cols(dx);
                        if cols.is_empty() {
                            continue;
                        }
                        for y in rows.clone() {
                            let iy = y + dy - g.pad;
                            let ix0 = cols.start + dx - g.pad;
                            let s = &src[iy * g.w + ix0..][..cols.len()];
                            let d = &mut dst[y * g.wo + cols.start..][..cols.len()];
                            for (o, &v) in d.iter_mut().zip(s) {
                                *o = *o + tap * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.output_shape(input.rank() == 4), out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Real>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: &[usize],
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input_shape, weight.shape(), pad)?;
    let go = grad_out.data();
    let wt = weight.data();
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut gin = vec![T::zero(); g.n * g.c * in_plane];

    for n in 0..g.n {
        for c in 0..g.c {
            let dst = &mut gin[(n * g.c + c) * in_plane..][..in_plane];
            for k in 0..g.k {
                let src = &go[(n * g.k + k) * out_plane..][..out_plane];
                for dy in 0..g.kh {
                    let rows = g.rows(dy);
                    for dx in 0..g.kw {
                        let tap = wt[((k * g.c + c) * g.kh + dy) * g.kw + dx];
                        let cols = g.cols(dx);
                        if cols.is_empty() {
                            continue;
                        }
                        for y in rows.clone() {
                            let iy = y + dy - g.pad;
                            let ix0 = cols.start + dx - g.pad;
                            let s = &src[y * g.wo + cols.start..][..cols.len()];
                            let d = &mut dst[iy * g.w + ix0..][..cols.len()];
                            for (o, &v) in d.iter_mut().zip(s) {
                                *o = *o + tap * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gin)
}

/// Gradients of [`conv2d`] with respect to weight and bias.
pub fn conv2d_grad_weight<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight_shape: &[usize],
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Geometry::new(input.shape(), weight_shape, pad)?;
    let go = grad_out.data();
    let x = input.data();
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut gw = vec![T::zero(); g.k * g.c * g.kh * g.kw];
    let mut gb = vec![T::zero(); g.k];

    for n in 0..g.n {
        for k in 0..g.k {
            let gplane = &go[(n * g.k + k) * out_plane..][..out_plane];
            gb[k] = gplane.iter().fold(gb[k], |acc, &v| acc + v);
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                for dy in 0..g.kh {
                    let rows = g.rows(dy);
                    for dx in 0..g.kw {
                        let cols = g.cols(dx);
                        let mut acc = T::zero();
                        for y in rows.clone() {
                            let iy = y + dy - g.pad;
                            let ix0 = cols.start + dx - g.pad;
                            let s = &src[iy * g.w + ix0..][..cols.len()];
                            let d = &gplane[y * g.wo + cols.start..][..cols.len()];
                            acc = d.iter().zip(s).fold(acc, |a, (&u, &v)| a + u * v);
                        }
                        let idx = ((k * g.c + c) * g.kh + dy) * g.kw + dx;
                        gw[idx] = gw[idx] + acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(weight_shape.to_vec(), gw)?,
        Tensor::new(vec![g.k], gb)?,
    ))
}
