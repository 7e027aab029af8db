//! PSNR, SSIM and evaluation reports.

use std::fmt::Write as _;

use crate::data::image::Image;
use crate::error::{Error, Result};

/// Which values are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// BT.601 luma, `16 + (65.481 R + 128.553 G + 24.966 B) / 255`.
    #[default]
    Y,
    Rgb,
}

impl ChannelMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "y" => Ok(ChannelMode::Y),
            "rgb" => Ok(ChannelMode::Rgb),
            other => Err(Error::usage(format!("channel mode must be y or rgb, got `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::Y => "y",
            ChannelMode::Rgb => "rgb",
        }
    }
}

/// Reported when the compared planes are identical.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// A single-channel f64 image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn luma(px: &[u8]) -> f64 {
    16.0 + (65.481 * px[0] as f64 + 128.553 * px[1] as f64 + 24.966 * px[2] as f64) / 255.0
}

/// Planes to compare after removing `shave` pixels from every border.
pub fn planes(img: &Image, mode: ChannelMode, shave: usize) -> Result<Vec<Plane>> {
    let (w, h) = (img.width(), img.height());
    if 2 * shave >= w || 2 * shave >= h {
        return Err(Error::usage(format!("shave {shave} leaves nothing of a {w}x{h} image")));
    }
    let (iw, ih) = (w - 2 * shave, h - 2 * shave);
    let pick = |f: &dyn Fn(&[u8]) -> f64| {
        let mut data = Vec::with_capacity(iw * ih);
        for y in shave..h - shave {
            for x in shave..w - shave {
                let i = 3 * (y * w + x);
                data.push(f(&img.pixels()[i..i + 3]));
            }
        }
        Plane {
            width: iw,
            height: ih,
            data,
        }
    };
    Ok(match mode {
        ChannelMode::Y => vec![pick(&luma)],
        ChannelMode::Rgb => (0..3).map(|c| pick(&move |p: &[u8]| p[c] as f64)).collect(),
    })
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over the selected channels; `+∞` when equal.
pub fn psnr(a: &Image, b: &Image, mode: ChannelMode, shave: usize) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, pb) = (planes(a, mode, shave)?, planes(b, mode, shave)?);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        sum += x.data.iter().zip(&y.data).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        count += x.data.len();
    }
    Ok(psnr_from_mse(sum / count as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalised Gaussian.
fn filter_valid(p: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one plane pair.
pub fn ssim_plane(a: &Plane, b: &Plane) -> Result<f64> {
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::usage(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    if a.data == b.data {
        return Ok(1.0);
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(&a.data, w, h, &g);
    let mu_b = filter_valid(&b.data, w, h, &g);
    let aa = filter_valid(&prod(|x, _| x * x), w, h, &g);
    let bb = filter_valid(&prod(|_, y| y * y), w, h, &g);
    let ab = filter_valid(&prod(|x, y| x * y), w, h, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// Mean SSIM over the selected channels.
pub fn ssim(a: &Image, b: &Image, mode: ChannelMode, shave: usize) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, pb) = (planes(a, mode, shave)?, planes(b, mode, shave)?);
    let mut sum = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        sum += ssim_plane(x, y)?;
    }
    Ok(sum / pa.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub channel: ChannelMode,
    pub shave: usize,
    pub scale: usize,
    pub method: String,
    pub ensemble: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub settings: EvalSettings,
    /// Sorted by name.
    pub rows: Vec<EvalRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn new(settings: EvalSettings, mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        EvalReport { settings, rows }
    }

    /// Arithmetic means of PSNR and SSIM over the rows.
    pub fn aggregate(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        (
            self.rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    }

    pub fn aggregate_line(&self) -> String {
        let (p, s) = self.aggregate();
        format!("mean,{},{s:.6}", fmt_db(p))
    }

    pub fn to_csv(&self) -> String {
        let s = &self.settings;
        let mut out = String::new();
        let _ = writeln!(out, "# method={}", s.method);
        let _ = writeln!(out, "# scale={}", s.scale);
        let _ = writeln!(out, "# channel={}", s.channel.name());
        let _ = writeln!(out, "# shave={}", s.shave);
        let _ = writeln!(out, "# ensemble={}", s.ensemble);
        out.push_str("image,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6}", r.name, fmt_db(r.psnr), r.ssim);
        }
        out.push_str(&self.aggregate_line());
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut s = seed;
        Image::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = s.to_le_bytes();
            [b[5], b[6], b[7]]
        })
        .unwrap()
    }

    #[test]
    fn identical_images() {
        let a = noise(16, 16, 1);
        assert_eq!(psnr(&a, &a, ChannelMode::Y, 2).unwrap(), PSNR_IDENTICAL);
        assert_eq!(ssim(&a, &a, ChannelMode::Rgb, 0).unwrap(), 1.0);
    }

    #[test]
    fn off_by_one_everywhere_is_20_log10_255() {
        let a = Image::filled(8, 8, [100, 50, 200]).unwrap();
        let b = Image::filled(8, 8, [101, 51, 201]).unwrap();
        let expect = 20.0 * 255f64.log10();
        assert!((psnr(&a, &b, ChannelMode::Rgb, 0).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = Image::filled(6, 6, [128, 128, 128]).unwrap();
        let mut last = f64::INFINITY;
        for d in 1..20u8 {
            let b = Image::filled(6, 6, [128 + d, 128, 128 - d]).unwrap();
            let p = psnr(&a, &b, ChannelMode::Rgb, 0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn shave_compares_only_the_interior() {
        let a = Image::filled(10, 8, [10, 10, 10]).unwrap();
        let b = Image::from_fn(10, 8, |x, y| if x < 2 || y < 2 || x >= 8 || y >= 6 { [200; 3] } else { [10; 3] }).unwrap();
        assert_eq!(psnr(&a, &b, ChannelMode::Y, 2).unwrap(), PSNR_IDENTICAL);
        assert!(psnr(&a, &b, ChannelMode::Y, 1).unwrap().is_finite());
    }

    #[test]
    fn luma_of_white_and_black() {
        assert!((luma(&[255, 255, 255]) - 235.0).abs() < 1e-12);
        assert_eq!(luma(&[0, 0, 0]), 16.0);
    }

    /// Direct per-window evaluation with explicit 2-D Gaussian weights.
    fn ssim_reference(a: &Plane, b: &Plane) -> f64 {
        let k = SSIM_WINDOW;
        let r = (k / 2) as f64;
        let mut wts = vec![0.0; k * k];
        for y in 0..k {
            for x in 0..k {
                wts[y * k + x] = (-(((x as f64 - r).powi(2) + (y as f64 - r).powi(2)) / (2.0 * 1.5 * 1.5))).exp();
            }
        }
        let s: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|v| *v /= s);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut n = 0;
        for y0 in 0..=a.height - k {
            for x0 in 0..=a.width - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        ma += wts[y * k + x] * a.at(x0 + x, y0 + y);
                        mb += wts[y * k + x] * b.at(x0 + x, y0 + y);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let (da, db) = (a.at(x0 + x, y0 + y) - ma, b.at(x0 + x, y0 + y) - mb);
                        va += wts[y * k + x] * da * da;
                        vb += wts[y * k + x] * db * db;
                        cov += wts[y * k + x] * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn ssim_of_constant_offset_matches_reference() {
        let a = Image::filled(16, 14, [90, 90, 90]).unwrap();
        let b = Image::filled(16, 14, [100, 100, 100]).unwrap();
        let (pa, pb) = (&planes(&a, ChannelMode::Rgb, 0).unwrap()[0], &planes(&b, ChannelMode::Rgb, 0).unwrap()[0]);
        let got = ssim_plane(pa, pb).unwrap();
        assert!((got - ssim_reference(pa, pb)).abs() < 1e-9);
        let c1 = (0.01f64 * 255.0).powi(2);
        let closed = (2.0 * 90.0 * 100.0 + c1) / (90.0f64.powi(2) + 100.0f64.powi(2) + c1);
        assert!((got - closed).abs() < 1e-9);
    }

    #[test]
    fn ssim_on_noise_matches_reference_and_is_symmetric() {
        for seed in 0..4 {
            let (a, b) = (noise(17, 13, seed), noise(17, 13, seed + 100));
            let (pa, pb) = (&planes(&a, ChannelMode::Y, 0).unwrap()[0], &planes(&b, ChannelMode::Y, 0).unwrap()[0]);
            let s = ssim_plane(pa, pb).unwrap();
            assert!((s - ssim_reference(pa, pb)).abs() < 1e-9);
            assert!((s - ssim_plane(pb, pa).unwrap()).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 20, [0; 3]).unwrap();
        assert!(matches!(ssim(&a, &a, ChannelMode::Y, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn report_aggregate_is_midpoint_and_sorted() {
        let settings = EvalSettings {
            channel: ChannelMode::Y,
            shave: 2,
            scale: 2,
            method: "bicubic".into(),
            ensemble: false,
        };
        let r = EvalReport::new(
            settings,
            vec![
                EvalRow { name: "b".into(), psnr: 30.0, ssim: 0.8 },
                EvalRow { name: "a".into(), psnr: 20.0, ssim: 0.6 },
            ],
        );
        assert_eq!(r.rows[0].name, "a");
        let (p, s) = r.aggregate();
        assert_eq!(p, 25.0);
        assert!((s - 0.7).abs() < 1e-15);
        let csv = r.to_csv();
        assert!(csv.starts_with("# method=bicubic\n"));
        assert!(csv.ends_with("mean,25.0000,0.700000\n"));
    }
}
