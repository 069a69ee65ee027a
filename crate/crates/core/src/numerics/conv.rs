//! 2-D cross-correlation over `[C, H, W]` tensors.
//!
//! Each call is lowered to a matrix product over the kernel taps that touch
//! the input at least once; taps that would only ever read zero padding are
//! dropped. This matters for the large multi-scale kernels, which run on
//! small maps.

use crate::error::{invalid_shape, Result};

use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, transpose};
use super::{Real, Tensor};

/// Geometry of a convolution call, validated once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Output extent of a convolution along one axis.
pub fn conv_output_len(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if k == 0 || stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c_in, h, w) = match input {
            &[c, h, w] => (c, h, w),
            _ => return Err(invalid_shape(format!("conv2d input must be [C,H,W], got {input:?}"))),
        };
        let (c_out, kc, k) = match kernel {
            &[o, i, kh, kw] if kh == kw => (o, i, kh),
            _ => {
                return Err(invalid_shape(format!(
                    "conv2d kernel must be [C_out,C_in,k,k], got {kernel:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(invalid_shape(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        let h_out = conv_output_len(h, k, stride, pad);
        let w_out = conv_output_len(w, k, stride, pad);
        match (h_out, w_out) {
            (Some(h_out), Some(w_out)) => Ok(Self {
                c_in,
                c_out,
                h,
                w,
                k,
                stride,
                pad,
                h_out,
                w_out,
            }),
            _ => Err(invalid_shape(format!(
                "conv2d with k={k}, stride={stride}, pad={pad} does not fit {h}x{w}"
            ))),
        }
    }

    /// Output indices `o` such that `o * stride + tap - pad` lies in `[0, len)`.
    #[inline]
    fn valid_range(&self, tap: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let off = tap as isize - self.pad as isize;
        // o*s + off >= 0  ->  o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // o*s + off <= len-1  ->  o <= floor((len-1-off)/s)
        let top = len as isize - 1 - off;
        if top < 0 {
            return 0..0;
        }
        let hi = (top / s + 1).min(out_len as isize);
        if hi <= lo {
            0..0
        } else {
            lo as usize..hi as usize
        }
    }
}

/// Cross-correlation without bias: `input [C_in,H,W]`, `kernel [C_out,C_in,k,k]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    Ok(conv2d_forward(&g, input.data(), kernel.data()))
}

/// Lowered form of a convolution: the kernel taps that touch the input at
/// least once, and the matching unrolled input `cols [P, C_in * taps]` with
/// `P = H_out * W_out`. Taps that only ever read padding are dropped.
struct Lowered<T> {
    taps: Vec<(usize, usize)>,
    cols: Vec<T>,
}

impl ConvGeometry {
    fn taps(&self) -> Vec<(usize, usize)> {
        let mut taps = Vec::new();
        for ky in 0..self.k {
            if self.valid_range(ky, self.h, self.h_out).is_empty() {
                continue;
            }
            for kx in 0..self.k {
                if !self.valid_range(kx, self.w, self.w_out).is_empty() {
                    taps.push((ky, kx));
                }
            }
        }
        taps
    }

    fn lower<T: Real>(&self, x: &[T]) -> Lowered<T> {
        let taps = self.taps();
        let width = self.c_in * taps.len();
        let mut cols = vec![T::zero(); self.h_out * self.w_out * width];
        for ic in 0..self.c_in {
            let plane = &x[ic * self.h * self.w..(ic + 1) * self.h * self.w];
            for (t, &(ky, kx)) in taps.iter().enumerate() {
                let col = ic * taps.len() + t;
                for oy in self.valid_range(ky, self.h, self.h_out) {
                    let iy = oy * self.stride + ky - self.pad;
                    for ox in self.valid_range(kx, self.w, self.w_out) {
                        let ix = ox * self.stride + kx - self.pad;
                        cols[(oy * self.w_out + ox) * width + col] = plane[iy * self.w + ix];
                    }
                }
            }
        }
        Lowered { taps, cols }
    }

    /// Kernel entries for the kept taps as `[C_in * taps, C_out]`.
    fn gather_kernel<T: Real>(&self, w: &[T], taps: &[(usize, usize)]) -> Vec<T> {
        let rows = self.c_in * taps.len();
        let mut out = vec![T::zero(); rows * self.c_out];
        for oc in 0..self.c_out {
            for ic in 0..self.c_in {
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    out[(ic * taps.len() + t) * self.c_out + oc] = w[((oc * self.c_in + ic) * self.k + ky) * self.k + kx];
                }
            }
        }
        out
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeometry, x: &[T], w: &[T]) -> Tensor<T> {
    let lowered = g.lower(x);
    let kernel = g.gather_kernel(w, &lowered.taps);
    let p = g.h_out * g.w_out;
    let width = g.c_in * lowered.taps.len();
    let mut out_t = vec![T::zero(); p * g.c_out];
    matmul_acc(&lowered.cols, &kernel, &mut out_t, p, width, g.c_out);
    Tensor::new([g.c_out, g.h_out, g.w_out], transpose(&out_t, p, g.c_out)).expect("conv output shape")
}

/// Vector-Jacobian products of [`conv2d`]: returns `(d_input, d_kernel)`,
/// each computed only when requested.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.h_out * g.w_out;
    let dy_t = transpose(dy, g.c_out, p);
    let taps = g.taps();
    let width = g.c_in * taps.len();
    let dw = want_dw.then(|| {
        let lowered = g.lower(x);
        let mut dk = vec![T::zero(); width * g.c_out];
        matmul_at_b_acc(&lowered.cols, &dy_t, &mut dk, p, width, g.c_out);
        let mut dw = vec![T::zero(); w.len()];
        for oc in 0..g.c_out {
            for ic in 0..g.c_in {
                for (t, &(ky, kx)) in taps.iter().enumerate() {
                    dw[((oc * g.c_in + ic) * g.k + ky) * g.k + kx] = dk[(ic * taps.len() + t) * g.c_out + oc];
                }
            }
        }
        dw
    });
    let dx = want_dx.then(|| {
        let kernel = g.gather_kernel(w, &taps);
        let mut dcols = vec![T::zero(); p * width];
        matmul_a_bt_acc(&dy_t, &kernel, &mut dcols, p, g.c_out, width);
        let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
        for ic in 0..g.c_in {
            let plane = &mut dx[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for (t, &(ky, kx)) in taps.iter().enumerate() {
                let col = ic * taps.len() + t;
                for oy in g.valid_range(ky, g.h, g.h_out) {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in g.valid_range(kx, g.w, g.w_out) {
                        let ix = ox * g.stride + kx - g.pad;
                        plane[iy * g.w + ix] += dcols[(oy * g.w_out + ox) * width + col];
                    }
                }
            }
        }
        dx
    });
    (dx, dw)
}
