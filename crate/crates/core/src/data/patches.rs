//! Ground-truth pyramids and aligned LR/HR patch extraction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::bicubic::resize_image;
use super::image::Image;

/// An LR image and its ground truth at every level; `levels[j - 1]` is
/// `2^j` times the LR size.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidImage {
    pub lr: Image,
    pub levels: Vec<Image>,
}

/// One training example in tensor form, (1, 3, ·, ·) each.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair<T> {
    pub lr: Tensor<T>,
    pub hr_levels: Vec<Tensor<T>>,
}

impl PyramidImage {
    /// Crops `hr` to a multiple of `2^levels`, then bicubic-downsamples it to
    /// every coarser level and to the LR input, rounding to 8 bits.
    pub fn from_hr(hr: &Image, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::usage("pyramid needs at least one level"));
        }
        let r = 1usize << levels;
        let hr = hr.modcrop(r)?;
        let (w, h) = (hr.width() / r, hr.height() / r);
        let lr = resize_image(&hr, w, h)?;
        let mut out = Vec::with_capacity(levels);
        for j in 1..levels {
            out.push(resize_image(&hr, w << j, h << j)?);
        }
        out.push(hr);
        Ok(PyramidImage { lr, levels: out })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn hr(&self) -> &Image {
        self.levels.last().expect("at least one level")
    }

    /// The `size × size` LR patch at `(x, y)` and the matching HR patches at
    /// `(2^j·x, 2^j·y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Result<Self> {
        let lr = self.lr.crop(x, y, size, size)?;
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(j, img)| {
                let k = 1usize << (j + 1);
                img.crop(k * x, k * y, k * size, k * size)
            })
            .collect::<Result<_>>()?;
        Ok(PyramidImage { lr, levels })
    }

    /// Uniformly placed random patch, or `None` if the LR image is smaller than `size`.
    pub fn random_crop<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Option<Self> {
        if self.lr.width() < size || self.lr.height() < size {
            return None;
        }
        let x = rng.gen_range(0..=self.lr.width() - size);
        let y = rng.gen_range(0..=self.lr.height() - size);
        Some(self.crop(x, y, size).expect("bounds checked"))
    }

    /// Raw 0..255 tensors.
    pub fn to_sample<T: Scalar>(&self) -> SamplePair<T> {
        SamplePair {
            lr: self.lr.to_tensor(),
            hr_levels: self.levels.iter().map(Image::to_tensor).collect(),
        }
    }
}

/// Top-left corners of a `size`-patch grid with the given stride, row-major.
pub fn tile_positions(width: usize, height: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if size == 0 || stride == 0 || width < size || height < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y in (0..=height - size).step_by(stride) {
        for x in (0..=width - size).step_by(stride) {
            out.push((x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = |k: usize| ((x * 29 + y * 13 + k * 71 + x * y) % 251) as u8;
            [v(0), v(1), v(2)]
        })
        .unwrap()
    }

    #[test]
    fn pyramid_sizes_double_per_level() {
        let p = PyramidImage::from_hr(&textured(70, 45), 2).unwrap();
        assert_eq!((p.lr.width(), p.lr.height()), (17, 11));
        assert_eq!((p.levels[0].width(), p.levels[0].height()), (34, 22));
        assert_eq!((p.hr().width(), p.hr().height()), (68, 44));
    }

    #[test]
    fn patch_sizes_for_two_levels() {
        let p = PyramidImage::from_hr(&textured(160, 160), 2).unwrap();
        let c = p.crop(3, 5, 32).unwrap();
        assert_eq!(c.lr.width(), 32);
        assert_eq!(c.levels[0].width(), 64);
        assert_eq!(c.levels[1].width(), 128);
    }

    #[test]
    fn crops_are_aligned_with_downsampling() {
        let p = PyramidImage::from_hr(&textured(96, 96), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let c = p.random_crop(16, &mut rng).unwrap();
            // find where the LR patch came from, then check the HR patch at twice that offset
            let (mut x0, mut y0) = (usize::MAX, 0);
            'search: for y in 0..=p.lr.height() - 16 {
                for x in 0..=p.lr.width() - 16 {
                    if p.lr.crop(x, y, 16, 16).unwrap() == c.lr {
                        (x0, y0) = (x, y);
                        break 'search;
                    }
                }
            }
            assert_ne!(x0, usize::MAX);
            assert_eq!(c.levels[0], p.hr().crop(2 * x0, 2 * y0, 32, 32).unwrap());
        }
    }

    #[test]
    fn interior_hr_patch_downsamples_to_its_lr_patch() {
        let p = PyramidImage::from_hr(&textured(64, 64), 1).unwrap();
        let c = p.crop(8, 8, 16).unwrap();
        let down = resize_image(&c.levels[0], 16, 16).unwrap();
        // borders differ only through clamping; compare the interior
        for y in 2..14 {
            for x in 2..14 {
                assert_eq!(down.get(x, y), c.lr.get(x, y), "({x},{y})");
            }
        }
    }

    #[test]
    fn exact_tiling_covers_each_pixel_once() {
        let pos = tile_positions(96, 64, 32, 32);
        assert_eq!(pos.len(), 6);
        let mut hits = vec![0u8; 96 * 64];
        for (x, y) in pos {
            for dy in 0..32 {
                for dx in 0..32 {
                    hits[(y + dy) * 96 + x + dx] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn small_image_yields_no_patch() {
        let p = PyramidImage::from_hr(&textured(20, 20), 1).unwrap();
        assert!(p.random_crop(16, &mut ChaCha8Rng::seed_from_u64(0)).is_none());
    }
}
