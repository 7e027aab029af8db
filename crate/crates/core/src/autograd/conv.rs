//! Convolution kernels over whole batches via im2col + GEMM.
//!
//! All routines are cross-correlations (no kernel flip). Column matrices are
//! laid out as `[cin·k·k, N·oh·ow]` so one GEMM covers the whole batch.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Spatial bookkeeping of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::usage("conv stride must be positive"));
        }
        if k == 0 {
            return Err(Error::usage("conv kernel size must be positive"));
        }
        let (h, w) = (input.h() + 2 * pad, input.w() + 2 * pad);
        if h < k {
            return Err(Error::dim("conv2d", "H", k, h));
        }
        if w < k {
            return Err(Error::dim("conv2d", "W", k, w));
        }
        Ok(ConvGeometry {
            n: input.n(),
            cin: input.c(),
            h: input.h(),
            w: input.w(),
            k,
            stride,
            pad,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn cols(&self) -> usize {
        self.n * self.out_plane()
    }

    /// Whether im2col is the identity layout (1×1, stride 1, no padding).
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` (N, cin, h, w) into `[cin·k·k, N·oh·ow]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = Vec::with_capacity(g.rows() * g.cols());
    let zero = T::zero();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                // valid ox range for stride 1: 0 <= ox + kx - pad < w
                let lo = g.pad.saturating_sub(kx).min(g.ow);
                let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow).max(lo);
                for n in 0..g.n {
                    let src = &x[(n * g.cin + ci) * g.h * g.w..(n * g.cin + ci + 1) * g.h * g.w];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            cols.resize(cols.len() + g.ow, zero);
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        if g.stride == 1 && lo == hi {
                            cols.resize(cols.len() + g.ow, zero);
                        } else if g.stride == 1 {
                            cols.resize(cols.len() + lo, zero);
                            let s0 = lo + kx - g.pad;
                            cols.extend_from_slice(&srow[s0..s0 + (hi - lo)]);
                            cols.resize(cols.len() + (g.ow - hi), zero);
                        } else {
                            cols.extend((0..g.ow).map(|ox| {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && (ix as usize) < g.w {
                                    srow[ix as usize]
                                } else {
                                    zero
                                }
                            }));
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds columns back, accumulating into `x`.
pub fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let plane_out = g.out_plane();
    let ncols = g.cols();
    for n in 0..g.n {
        for ci in 0..g.cin {
            let dst = &mut x[(n * g.cin + ci) * g.h * g.w..(n * g.cin + ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let src = &cols[row * ncols + n * plane_out..row * ncols + (n + 1) * plane_out];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let lo = g.pad.saturating_sub(kx);
                            let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow);
                            if lo < hi {
                                let d0 = lo + kx - g.pad;
                                for (d, &v) in drow[d0..d0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                    *d += v;
                                }
                            }
                            continue;
                        }
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// (N, C, P) batch-major buffer -> (C, N·P) channel-major buffer.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for b in 0..n {
            out.extend_from_slice(&x[(b * c + ch) * plane..(b * c + ch + 1) * plane]);
        }
    }
    out
}

/// (C, N·P) -> (N, C, P), optionally adding a per-channel bias.
fn to_batch_major<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * plane + b * plane..ch * n * plane + (b + 1) * plane];
            match bias {
                Some(bias) => {
                    let bv = bias[ch];
                    out.extend(src.iter().map(|&s| s + bv));
                }
                None => out.extend_from_slice(src),
            }
        }
    }
    out
}

fn row_major(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

fn transposed(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

/// Cross-correlation. `weight` is (cout, cin, k, k); returns (N, cout, oh, ow).
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    g: &ConvGeometry,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
) -> Vec<T> {
    if narrow_output(g, cout) {
        return shifted_forward(x, g, weight, bias, cout);
    }
    let rows = g.rows();
    let ncols = g.cols();
    let cols = if g.is_pointwise() {
        to_channel_major(x, g.n, g.cin, g.h * g.w)
    } else {
        im2col(x, g)
    };
    let tmp = T::gemm_new(cout, rows, ncols, weight, row_major(rows), &cols, row_major(ncols));
    to_batch_major(&tmp, g.n, cout, g.out_plane(), bias)
}

/// Stride-1 spatial convolution with fewer output than input channels. Unfolding
/// the input would cost cin·k·k rows per pixel, so instead every kernel tap is
/// applied to the whole input at once and the cout·k·k partial maps are summed
/// at their offsets.
fn narrow_output(g: &ConvGeometry, cout: usize) -> bool {
    g.stride == 1 && g.k > 1 && cout < g.cin
}

fn shifted_forward<T: Scalar>(x: &[T], g: &ConvGeometry, weight: &[T], bias: Option<&[T]>, cout: usize) -> Vec<T> {
    let (k, cin, plane) = (g.k, g.cin, g.h * g.w);
    let npix = g.n * plane;
    let xcm = to_channel_major(x, g.n, cin, plane);
    let mut wr = vec![T::zero(); k * k * cout * cin];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..k * k {
                wr[(t * cout + co) * cin + ci] = weight[(co * cin + ci) * k * k + t];
            }
        }
    }
    let z = T::gemm_new(k * k * cout, cin, npix, &wr, row_major(cin), &xcm, row_major(npix));
    let oplane = g.out_plane();
    let mut out = vec![T::zero(); g.n * cout * oplane];
    if let Some(bias) = bias {
        for (i, v) in out.iter_mut().enumerate() {
            *v = bias[(i / oplane) % cout];
        }
    }
    for ky in 0..k {
        for kx in 0..k {
            let lo = g.pad.saturating_sub(kx).min(g.ow);
            let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow).max(lo);
            if lo == hi {
                continue;
            }
            let s0 = lo + kx - g.pad;
            for co in 0..cout {
                let zrow = &z[((ky * k + kx) * cout + co) * npix..((ky * k + kx) * cout + co + 1) * npix];
                for b in 0..g.n {
                    for oy in 0..g.oh {
                        let iy = (oy + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &zrow[b * plane + iy as usize * g.w + s0..][..hi - lo];
                        let dst = &mut out[((b * cout + co) * g.oh + oy) * g.ow..][lo..hi];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]; each output buffer is accumulated into when present.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    g: &ConvGeometry,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let rows = g.rows();
    let ncols = g.cols();
    let plane = g.out_plane();
    let go = to_channel_major(grad_out, g.n, cout, plane);
    if let Some(gb) = grad_b {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += go[co * ncols..(co + 1) * ncols].iter().copied().sum::<T>();
        }
    }
    if let Some(g2) = flipped_geometry(g, cout) {
        flipped_backward(x, g, &g2, weight, cout, grad_out, grad_x, grad_w);
        return;
    }
    if let Some(gw) = grad_w {
        let cols = if g.is_pointwise() {
            to_channel_major(x, g.n, g.cin, g.h * g.w)
        } else {
            im2col(x, g)
        };
        T::gemm(
            cout,
            ncols,
            rows,
            T::one(),
            &go,
            row_major(ncols),
            &cols,
            transposed(ncols),
            T::one(),
            gw,
            row_major(rows),
        );
    }
    if let Some(gx) = grad_x {
        let dcols = T::gemm_new(rows, cout, ncols, weight, transposed(rows), &go, row_major(ncols));
        if g.is_pointwise() {
            let back = to_batch_major(&dcols, g.n, g.cin, g.h * g.w, None);
            for (d, v) in gx.iter_mut().zip(back) {
                *d += v;
            }
        } else {
            col2im_add(&dcols, g, gx);
        }
    }
}

/// Geometry of the output gradient unfolded with a flipped kernel, used when
/// that is cheaper than unfolding the input: stride 1, fewer output than input
/// channels, and a padding that keeps sizes.
fn flipped_geometry(g: &ConvGeometry, cout: usize) -> Option<ConvGeometry> {
    if !narrow_output(g, cout) || g.pad >= g.k {
        return None;
    }
    let g2 = ConvGeometry::new(Shape::new(g.n, cout, g.oh, g.ow), g.k, 1, g.k - 1 - g.pad).ok()?;
    (g2.oh == g.h && g2.ow == g.w).then_some(g2)
}

/// Both gradients from `D = unfold(grad_out)` with rows `(co, k-1-ky, k-1-kx)`:
/// `grad_x = W_flipped · D` and `grad_w = D · X^T`.
#[allow(clippy::too_many_arguments)]
fn flipped_backward<T: Scalar>(
    x: &[T],
    g: &ConvGeometry,
    g2: &ConvGeometry,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
) {
    if grad_x.is_none() && grad_w.is_none() {
        return;
    }
    let (k, cin, plane) = (g.k, g.cin, g.h * g.w);
    let npix = g.n * plane;
    let drows = cout * k * k;
    let d = im2col(grad_out, g2);
    let flip = |co: usize, ci: usize, ky: usize, kx: usize| ((co * cin + ci) * k + ky) * k + kx;
    if let Some(gx) = grad_x {
        let mut wf = vec![T::zero(); weight.len()];
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        wf[((ci * cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx)] = weight[flip(co, ci, ky, kx)];
                    }
                }
            }
        }
        let back = T::gemm_new(cin, drows, npix, &wf, row_major(drows), &d, row_major(npix));
        let back = to_batch_major(&back, g.n, cin, plane, None);
        for (dst, v) in gx.iter_mut().zip(back) {
            *dst += v;
        }
    }
    if let Some(gw) = grad_w {
        let xcm = to_channel_major(x, g.n, cin, plane);
        let gm = T::gemm_new(drows, npix, cin, &d, row_major(npix), &xcm, transposed(npix));
        for co in 0..cout {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &gm[((co * k + (k - 1 - ky)) * k + (k - 1 - kx)) * cin..][..cin];
                    for (ci, &v) in row.iter().enumerate() {
                        gw[flip(co, ci, ky, kx)] += v;
                    }
                }
            }
        }
    }
}

/// Geometry of a transposed convolution viewed as the adjoint of a regular one.
///
/// For input (N, cin, h, w) the output side is (N, cout, oh, ow) with
/// `oh = (h - 1)·stride - 2·pad + k`.
pub fn transpose_geometry(input: Shape, cout: usize, k: usize, stride: usize, pad: usize) -> Result<ConvGeometry> {
    let oh = ((input.h() - 1) * stride + k)
        .checked_sub(2 * pad)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::usage("transposed conv output would be empty"))?;
    let ow = ((input.w() - 1) * stride + k)
        .checked_sub(2 * pad)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::usage("transposed conv output would be empty"))?;
    let g = ConvGeometry::new(Shape::new(input.n(), cout, oh, ow), k, stride, pad)?;
    if g.oh != input.h() || g.ow != input.w() {
        return Err(Error::usage("transposed conv geometry is not invertible"));
    }
    Ok(g)
}

/// Transposed convolution. `weight` is (cin, cout, k, k); `g` comes from
/// [`transpose_geometry`] (its `cin` is the output channel count).
pub fn conv_transpose_forward<T: Scalar>(
    x: &[T],
    g: &ConvGeometry,
    weight: &[T],
    bias: Option<&[T]>,
    cin: usize,
) -> Vec<T> {
    let rows = g.rows();
    let ncols = g.cols();
    let xt = to_channel_major(x, g.n, cin, g.out_plane());
    let cols = T::gemm_new(rows, cin, ncols, weight, transposed(rows), &xt, row_major(ncols));
    let mut out = vec![T::zero(); g.n * g.cin * g.h * g.w];
    col2im_add(&cols, g, &mut out);
    if let Some(bias) = bias {
        let plane = g.h * g.w;
        for b in 0..g.n {
            for (c, &bv) in bias.iter().enumerate() {
                for v in &mut out[(b * g.cin + c) * plane..(b * g.cin + c + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Scalar>(
    x: &[T],
    g: &ConvGeometry,
    weight: &[T],
    cin: usize,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let rows = g.rows();
    let ncols = g.cols();
    if let Some(gb) = grad_b {
        let plane = g.h * g.w;
        for b in 0..g.n {
            for (c, acc) in gb.iter_mut().enumerate() {
                *acc += grad_out[(b * g.cin + c) * plane..(b * g.cin + c + 1) * plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
    }
    if grad_x.is_none() && grad_w.is_none() {
        return;
    }
    let gcols = im2col(grad_out, g);
    if let Some(gw) = grad_w {
        let xt = to_channel_major(x, g.n, cin, g.out_plane());
        T::gemm(
            cin,
            ncols,
            rows,
            T::one(),
            &xt,
            row_major(ncols),
            &gcols,
            transposed(ncols),
            T::one(),
            gw,
            row_major(rows),
        );
    }
    if let Some(gx) = grad_x {
        let gxt = T::gemm_new(cin, rows, ncols, weight, row_major(rows), &gcols, row_major(ncols));
        let back = to_batch_major(&gxt, g.n, cin, g.out_plane(), None);
        for (d, v) in gx.iter_mut().zip(back) {
            *d += v;
        }
    }
}
