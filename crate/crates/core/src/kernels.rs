//! Raw loops behind the differentiable ops. Slices are single images in
//! C×H×W order unless noted.

use crate::scalar::{gemm, Scalar, Strides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extent along one axis, `None` when not positive.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn out_h(&self) -> usize {
        Self::out_extent(self.height, self.kernel, self.stride, self.pad).unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        Self::out_extent(self.width, self.kernel, self.stride, self.pad).unwrap_or(0)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Lays out every receptive field as a column: rows are (c, ky, kx), columns
/// are output positions in row-major order. Out-of-image taps are zero.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    debug_assert_eq!(col.len(), g.col_rows() * oh * ow);
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        // valid ox satisfy 0 <= ox + kx - pad < width
                        let lo = g.pad.saturating_sub(kx).min(ow);
                        let hi = (g.width + g.pad).saturating_sub(kx).min(ow).max(lo);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        if hi > lo {
                            let s0 = lo + kx - g.pad;
                            out_row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let in_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation: `out[n] = weight · im2col(x[n]) + bias`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    out_channels: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let positions = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); batch * out_channels * positions];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.col_rows() * positions] };
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_channels * positions..(n + 1) * out_channels * positions];
        if let Some(b) = bias {
            for (co, row) in on.chunks_mut(positions).enumerate() {
                row.fill(b[co]);
            }
        }
        let rhs: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        gemm(
            out_channels,
            g.col_rows(),
            positions,
            weight,
            Strides::row_major(g.col_rows()),
            rhs,
            Strides::row_major(positions),
            on,
            Strides::row_major(positions),
            bias.is_some(),
        );
    }
    out
}

/// Gradients of [`conv2d_forward`]. Each requested gradient buffer is
/// accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    out_channels: usize,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let positions = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    let rows = g.col_rows();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * positions] };
    let mut dcol = if g.is_pointwise() || dx.is_none() { Vec::new() } else { vec![T::zero(); rows * positions] };
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_channels * positions..(n + 1) * out_channels * positions];
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in dyn_.chunks(positions).enumerate() {
                let mut s = T::zero();
                for &v in row {
                    s = s + v;
                }
                db[co] = db[co] + s;
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, g, &mut col);
                &col
            };
            // dW (Cout×rows) += dY (Cout×P) · colᵀ (P×rows)
            gemm(
                out_channels,
                positions,
                rows,
                dyn_,
                Strides::row_major(positions),
                cols,
                Strides::row_major(positions).transposed(),
                dw,
                Strides::row_major(rows),
                true,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm(
                    rows,
                    out_channels,
                    positions,
                    weight,
                    Strides::row_major(rows).transposed(),
                    dyn_,
                    Strides::row_major(positions),
                    dxn,
                    Strides::row_major(positions),
                    true,
                );
            } else {
                gemm(
                    rows,
                    out_channels,
                    positions,
                    weight,
                    Strides::row_major(rows).transposed(),
                    dyn_,
                    Strides::row_major(positions),
                    &mut dcol,
                    Strides::row_major(positions),
                    false,
                );
                col2im(&dcol, g, dxn);
            }
        }
    }
}

/// 2×2 non-overlapping max pooling over planes of `h×w`. Returns the pooled
/// values and, per output, the flat input index of the first maximum in
/// row-major window order.
pub fn maxpool2x2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let cands = [i0, i0 + 1, i0 + w, i0 + w + 1];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Source sampling for one axis of a bilinear resize with half-pixel centers
/// and edge clamping: output `i` reads `(1 - frac) * src[lo] + frac * src[hi]`.
#[derive(Debug, Clone)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut taps = AxisTaps { lo: Vec::with_capacity(dst), hi: Vec::with_capacity(dst), frac: Vec::with_capacity(dst) };
        for i in 0..dst {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(s - lo as f64);
        }
        taps
    }
}

pub fn resize_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = AxisTaps::new(h, oh);
    let tx = AxisTaps::new(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let fy = T::of_f64(ty.frac[oy]);
            let r0 = &src[ty.lo[oy] * w..(ty.lo[oy] + 1) * w];
            let r1 = &src[ty.hi[oy] * w..(ty.hi[oy] + 1) * w];
            for ox in 0..ow {
                let fx = T::of_f64(tx.frac[ox]);
                let (a, b) = (tx.lo[ox], tx.hi[ox]);
                let top = r0[a] + (r0[b] - r0[a]) * fx;
                let bot = r1[a] + (r1[b] - r1[a]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

pub fn resize_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
    let ty = AxisTaps::new(h, oh);
    let tx = AxisTaps::new(w, ow);
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let fy = T::of_f64(ty.frac[oy]);
            for ox in 0..ow {
                let fx = T::of_f64(tx.frac[ox]);
                let g = src[oy * ow + ox];
                let (a, b) = (tx.lo[ox], tx.hi[ox]);
                let (r0, r1) = (ty.lo[oy] * w, ty.hi[oy] * w);
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                dst[r0 + a] = dst[r0 + a] + gt * (T::one() - fx);
                dst[r0 + b] = dst[r0 + b] + gt * fx;
                dst[r1 + a] = dst[r1 + a] + gb * (T::one() - fx);
                dst[r1 + b] = dst[r1 + b] + gb * fx;
            }
        }
    }
}

/// Row-wise softmax of `x / scale`, max-subtracted.
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize, scale: T) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = ((s - max) / scale).exp();
            sum = sum + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    out
}
