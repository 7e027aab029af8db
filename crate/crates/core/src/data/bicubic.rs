//! Separable bicubic resampling: cubic convolution kernel with a = −0.5,
//! half-pixel centres, clamped borders. Downscaling widens the kernel by the
//! inverse scale so it also low-passes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::image::Image;

pub const CUBIC_A: f64 = -0.5;

/// Keys' cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
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

/// Source taps of one output sample: clamped input indices and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Normalised taps for resampling a line of `in_len` samples to `out_len`.
pub fn line_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = scale.min(1.0);
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|i| {
            let centre = (i as f64 + 0.5) / scale - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut index = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weight = Vec::with_capacity(index.capacity());
            for j in lo..=hi {
                let w = stretch * cubic((centre - j as f64) * stretch);
                if w != 0.0 {
                    index.push(j.clamp(0, in_len as isize - 1) as usize);
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            for w in &mut weight {
                *w /= total;
            }
            Taps { index, weight }
        })
        .collect()
}

fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize, rows: &[Taps], cols: &[Taps]) -> Vec<f64> {
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, t) in cols.iter().enumerate() {
            tmp[y * ow + x] = t.index.iter().zip(&t.weight).map(|(&j, &k)| line[j] * k).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, t) in rows.iter().enumerate() {
        for (&j, &k) in t.index.iter().zip(&t.weight) {
            let src_row = &tmp[j * ow..(j + 1) * ow];
            for (o, &s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += k * s;
            }
        }
    }
    out
}

/// Resizes every (n, c) plane to `oh × ow`. Values are not clamped.
pub fn bicubic_resize<T: Scalar>(t: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    if oh == 0 || ow == 0 {
        return Err(Error::usage("bicubic target dimensions must be positive"));
    }
    let s = t.shape();
    let (h, w) = (s.h(), s.w());
    let rows = line_taps(h, oh);
    let cols = line_taps(w, ow);
    let mut data = Vec::with_capacity(s.n() * s.c() * oh * ow);
    for plane in t.data().chunks(h * w) {
        let src: Vec<f64> = plane.iter().map(|v| v.to_f64_lossy()).collect();
        data.extend(resize_plane(&src, h, w, oh, ow, &rows, &cols).into_iter().map(T::from_f64_lossy));
    }
    Tensor::from_vec(Shape::new(s.n(), s.c(), oh, ow), data)
}

/// 8-bit resize: resample in 0..255 floats, then round and clamp.
pub fn resize_image(img: &Image, ow: usize, oh: usize) -> Result<Image> {
    let t = bicubic_resize(&img.to_tensor::<f64>(), oh, ow)?;
    Image::from_tensor(&t, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // a = -0.5 at x = 0.5: (1.5·0.5 − 2.5)·0.25 + 1
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn taps_are_a_partition_of_unity() {
        for (i, o) in [(10, 5), (10, 20), (7, 3), (3, 7), (33, 8), (5, 5)] {
            for t in line_taps(i, o) {
                let s: f64 = t.weight.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let t = Tensor::<f64>::full(Shape::new(1, 3, 9, 7), 42.5);
        for (oh, ow) in [(4, 3), (18, 14), (5, 11)] {
            let r = bicubic_resize(&t, oh, ow).unwrap();
            assert!(r.data().iter().all(|&v| (v - 42.5).abs() < 1e-12));
        }
    }

    #[test]
    fn ramp_stays_linear_in_the_interior() {
        let w = 32;
        let t = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, w), |[_, _, _, x]| 3.0 * x as f64 + 1.0);
        let r = bicubic_resize(&t, 4, w / 2).unwrap();
        // output x samples input position 2x + 0.5; the stretched kernel reaches 4 taps either side
        for x in 3..w / 2 - 3 {
            let expect = 3.0 * (2.0 * x as f64 + 0.5) + 1.0;
            assert!((r.at(0, 0, 1, x) - expect).abs() < 1e-9, "x={x}");
        }
        let up = bicubic_resize(&t, 4, 2 * w).unwrap();
        for x in 4..2 * w - 4 {
            let expect = 3.0 * ((x as f64 + 0.5) / 2.0 - 0.5) + 1.0;
            assert!((up.at(0, 0, 2, x) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_size_is_exact() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 6), |[_, c, y, x]| (c * 31 + y * 7 + x * x) as f64);
        let r = bicubic_resize(&t, 5, 6).unwrap();
        assert!(r.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn zero_target_is_usage_error() {
        let t = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(bicubic_resize(&t, 0, 2), Err(Error::Usage(_))));
    }
}
