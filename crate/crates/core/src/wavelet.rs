//! Single-level orthonormal 2-D Haar transform on (N, C, H, W) tensors.
//!
//! For each 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a - b + c - d) / 2
//! hl = (a + b - c - d) / 2     hh = (a - b - c + d) / 2
//! ```
//!
//! `hl` responds to horizontal edges (row-to-row change) and `lh` to vertical
//! edges. The 4×4 block matrix is symmetric and orthogonal, so the inverse
//! transform is the same matrix and the adjoint of `idwt2` is `dwt2`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    LL,
    HL,
    LH,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::HL, Band::LH, Band::HH];

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "ll",
            Band::HL => "hl",
            Band::LH => "lh",
            Band::HH => "hh",
        }
    }
}

/// Four equally shaped sub-band tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandQuad<T> {
    pub ll: Tensor<T>,
    pub hl: Tensor<T>,
    pub lh: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Scalar> SubbandQuad<T> {
    pub fn new(ll: Tensor<T>, hl: Tensor<T>, lh: Tensor<T>, hh: Tensor<T>) -> Result<Self> {
        let s = ll.shape();
        for b in [&hl, &lh, &hh] {
            s.expect_eq(&b.shape(), "SubbandQuad")?;
        }
        Ok(SubbandQuad { ll, hl, lh, hh })
    }

    pub fn shape(&self) -> Shape {
        self.ll.shape()
    }

    pub fn band(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::LL => &self.ll,
            Band::HL => &self.hl,
            Band::LH => &self.lh,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> T {
        self.ll.sum_sq() + self.hl.sum_sq() + self.lh.sum_sq() + self.hh.sum_sq()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        SubbandQuad::new(
            self.ll.add(&other.ll)?,
            self.hl.add(&other.hl)?,
            self.lh.add(&other.lh)?,
            self.hh.add(&other.hh)?,
        )
    }
}

/// Raw forward transform; `x` has shape `s` with even H and W.
pub(crate) fn dwt2_raw<T: Scalar>(x: &[T], s: Shape) -> [Vec<T>; 4] {
    let (h2, w2) = (s.h() / 2, s.w() / 2);
    let len = s.n() * s.c() * h2 * w2;
    let half = T::from_f64_lossy(0.5);
    let mut ll = vec![T::zero(); len];
    let mut hl = vec![T::zero(); len];
    let mut lh = vec![T::zero(); len];
    let mut hh = vec![T::zero(); len];
    for nc in 0..s.n() * s.c() {
        let src = &x[nc * s.plane()..(nc + 1) * s.plane()];
        for y in 0..h2 {
            let top = &src[2 * y * s.w()..(2 * y + 1) * s.w()];
            let bot = &src[(2 * y + 1) * s.w()..(2 * y + 2) * s.w()];
            for xx in 0..w2 {
                let (a, b) = (top[2 * xx], top[2 * xx + 1]);
                let (c, d) = (bot[2 * xx], bot[2 * xx + 1]);
                let o = (nc * h2 + y) * w2 + xx;
                ll[o] = (a + b + c + d) * half;
                lh[o] = (a - b + c - d) * half;
                hl[o] = (a + b - c - d) * half;
                hh[o] = (a - b - c + d) * half;
            }
        }
    }
    [ll, hl, lh, hh]
}

/// Raw inverse transform; bands have shape `s`, output (N, C, 2H, 2W).
pub(crate) fn idwt2_raw<T: Scalar>(ll: &[T], hl: &[T], lh: &[T], hh: &[T], s: Shape) -> Vec<T> {
    let (h, w) = (s.h(), s.w());
    let w_out = 2 * w;
    let half = T::from_f64_lossy(0.5);
    let mut out = vec![T::zero(); s.numel() * 4];
    for nc in 0..s.n() * s.c() {
        let dst = &mut out[nc * 4 * h * w..(nc + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = (nc * h + y) * w + x;
                let (q, r, u, v) = (ll[i], lh[i], hl[i], hh[i]);
                dst[2 * y * w_out + 2 * x] = (q + r + u + v) * half;
                dst[2 * y * w_out + 2 * x + 1] = (q - r + u - v) * half;
                dst[(2 * y + 1) * w_out + 2 * x] = (q + r - u - v) * half;
                dst[(2 * y + 1) * w_out + 2 * x + 1] = (q - r - u + v) * half;
            }
        }
    }
    out
}

pub fn dwt2<T: Scalar>(image: &Tensor<T>) -> Result<SubbandQuad<T>> {
    let s = image.shape();
    if s.h() % 2 != 0 {
        return Err(Error::dim("dwt2", "H", s.h() + 1, s.h()));
    }
    if s.w() % 2 != 0 {
        return Err(Error::dim("dwt2", "W", s.w() + 1, s.w()));
    }
    let out = s.with_hw(s.h() / 2, s.w() / 2);
    let [ll, hl, lh, hh] = dwt2_raw(image.data(), s);
    Ok(SubbandQuad {
        ll: Tensor::from_vec(out, ll)?,
        hl: Tensor::from_vec(out, hl)?,
        lh: Tensor::from_vec(out, lh)?,
        hh: Tensor::from_vec(out, hh)?,
    })
}

pub fn idwt2<T: Scalar>(quad: &SubbandQuad<T>) -> Result<Tensor<T>> {
    let s = quad.ll.shape();
    for b in [&quad.hl, &quad.lh, &quad.hh] {
        s.expect_eq(&b.shape(), "idwt2")?;
    }
    let data = idwt2_raw(quad.ll.data(), quad.hl.data(), quad.lh.data(), quad.hh.data(), s);
    Tensor::from_vec(s.with_hw(2 * s.h(), 2 * s.w()), data)
}

fn check_scale(s: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::usage(format!("LL scale must be positive, got {s}")));
    }
    Ok(())
}

/// Divides the LL band by `s`; the detail bands are untouched.
pub fn scale_ll<T: Scalar>(quad: &SubbandQuad<T>, s: f64) -> Result<SubbandQuad<T>> {
    check_scale(s)?;
    let k = T::from_f64_lossy(s);
    Ok(SubbandQuad {
        ll: quad.ll.map(|v| v / k),
        ..quad.clone()
    })
}

/// Multiplies the LL band by `s`, inverting [`scale_ll`].
pub fn unscale_ll<T: Scalar>(quad: &SubbandQuad<T>, s: f64) -> Result<SubbandQuad<T>> {
    check_scale(s)?;
    let k = T::from_f64_lossy(s);
    Ok(SubbandQuad {
        ll: quad.ll.map(|v| v * k),
        ..quad.clone()
    })
}

/// Coefficient histogram and moments for one band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandHistogram {
    pub band: Band,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    /// Coefficients falling outside the histogram range.
    pub clipped: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandHistogram {
    pub range: (f64, f64),
    pub bins: usize,
    pub bands: [BandHistogram; 4],
}

impl SubbandHistogram {
    pub fn band(&self, band: Band) -> &BandHistogram {
        &self.bands[band as usize]
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.range.1 - self.range.0) / self.bins as f64;
        (
            self.range.0 + i as f64 * width,
            self.range.0 + (i + 1) as f64 * width,
        )
    }

    /// CSV with columns `band,bin_left,bin_right,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "band,bin_left,bin_right,count")?;
        for b in &self.bands {
            for (i, c) in b.counts.iter().enumerate() {
                let (l, r) = self.bin_edges(i);
                writeln!(out, "{},{:.6},{:.6},{}", b.band.name(), l, r, c)?;
            }
        }
        Ok(())
    }

    /// CSV with columns `band,mean,std,clipped`.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "band,mean,std,clipped")?;
        for b in &self.bands {
            writeln!(out, "{},{:.9},{:.9},{}", b.band.name(), b.mean, b.std, b.clipped)?;
        }
        Ok(())
    }
}

/// Histograms the DWT coefficients of every image, pooled per band.
///
/// Bins are half-open `[left, right)` except the last, which also takes the
/// right edge.
pub fn subband_histogram<T: Scalar>(
    images: &[Tensor<T>],
    bins: usize,
    range: (f64, f64),
) -> Result<SubbandHistogram> {
    if images.is_empty() {
        return Err(Error::usage("subband_histogram needs at least one image"));
    }
    if bins < 2 {
        return Err(Error::usage("subband_histogram needs at least two bins"));
    }
    if !(range.1 > range.0) {
        return Err(Error::usage("histogram range must be increasing"));
    }
    let width = (range.1 - range.0) / bins as f64;
    let mut counts = vec![vec![0u64; bins]; 4];
    let mut clipped = [0u64; 4];
    let mut sums = [0.0f64; 4];
    let mut sq = [0.0f64; 4];
    let mut n = 0usize;
    for img in images {
        let quad = dwt2(img)?;
        n += quad.ll.len();
        for (bi, band) in Band::ALL.iter().enumerate() {
            for &v in quad.band(*band).data() {
                let v = v.to_f64_lossy();
                sums[bi] += v;
                sq[bi] += v * v;
                let idx = ((v - range.0) / width).floor();
                if v == range.1 {
                    counts[bi][bins - 1] += 1;
                } else if idx >= 0.0 && (idx as usize) < bins {
                    counts[bi][idx as usize] += 1;
                } else {
                    clipped[bi] += 1;
                }
            }
        }
    }
    let nf = n as f64;
    let mk = |bi: usize| {
        let mean = sums[bi] / nf;
        BandHistogram {
            band: Band::ALL[bi],
            counts: counts[bi].clone(),
            mean,
            std: (sq[bi] / nf - mean * mean).max(0.0).sqrt(),
            clipped: clipped[bi],
        }
    };
    Ok(SubbandHistogram {
        range,
        bins,
        bands: [mk(0), mk(1), mk(2), mk(3)],
    })
}
