//! Whole-image super-resolution and dataset evaluation.

use crate::data::augment::Dihedral;
use crate::data::bicubic::resize_image;
use crate::data::image::Image;
use crate::data::preprocess::Preprocessor;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, EvalReport, EvalRow, EvalSettings};
use crate::model::{self_ensemble, Model};
use crate::scalar::Scalar;

/// Anything that maps an LR image to an image `scale()` times larger.
pub trait Upscaler {
    fn scale(&self) -> usize;
    fn name(&self) -> String;
    fn upscale(&self, lr: &Image) -> Result<Image>;
}

#[derive(Clone, Copy, Debug)]
pub struct Bicubic {
    pub scale: usize,
}

impl Upscaler for Bicubic {
    fn scale(&self) -> usize {
        self.scale
    }

    fn name(&self) -> String {
        "bicubic".to_string()
    }

    fn upscale(&self, lr: &Image) -> Result<Image> {
        resize_image(lr, lr.width() * self.scale, lr.height() * self.scale)
    }
}

/// Replicates the last row/column so both sides are even.
pub fn pad_even(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w + w % 2, h + h % 2);
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    Image::from_fn(pw, ph, |x, y| img.get(x.min(w - 1), y.min(h - 1))).expect("positive size")
}

pub struct ModelUpscaler<'a, T> {
    pub model: &'a Model<T>,
    pub pre: &'a Preprocessor,
    /// Dihedral transforms averaged at inference; `[Identity]` for plain inference.
    pub transforms: Vec<Dihedral>,
}

impl<'a, T: Scalar> ModelUpscaler<'a, T> {
    pub fn new(model: &'a Model<T>, pre: &'a Preprocessor, ensemble: bool) -> Self {
        let transforms = if ensemble {
            Dihedral::ALL.to_vec()
        } else {
            vec![Dihedral::Identity]
        };
        ModelUpscaler { model, pre, transforms }
    }

    /// Final prediction in raw 0..255 units, before rounding.
    pub fn upscale_raw(&self, lr: &Image) -> Result<crate::tensor::Tensor<T>> {
        let x = self.pre.input(&lr.to_tensor::<T>())?;
        let y = if self.transforms == [Dihedral::Identity] {
            self.model.predict_final(&x)?
        } else {
            self_ensemble(&x, &self.transforms, |t| self.model.predict_final(t))?
        };
        self.pre.inverse(&y)
    }
}

impl<T: Scalar> Upscaler for ModelUpscaler<'_, T> {
    fn scale(&self) -> usize {
        self.model.config.scale()
    }

    fn name(&self) -> String {
        format!(
            "srclique[{}+{}]",
            self.model.config.fen_kind.label(),
            self.model.config.up_kind.label()
        )
    }

    fn upscale(&self, lr: &Image) -> Result<Image> {
        Image::from_tensor(&self.upscale_raw(lr)?, 0)
    }
}

/// Degrades each HR image (cropped to a multiple of the scale) with bicubic
/// downsampling, super-resolves it and scores it against the crop.
pub fn evaluate<U: Upscaler + ?Sized>(up: &U, images: &[(String, Image)], settings: &EvalSettings) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::usage("evaluation set is empty"));
    }
    let r = up.scale();
    let mut rows = Vec::with_capacity(images.len());
    for (name, hr) in images {
        let hr = hr.modcrop(r)?;
        let lr = resize_image(&hr, hr.width() / r, hr.height() / r)?;
        let sr = up.upscale(&lr)?;
        rows.push(score(name, &sr, &hr, settings)?);
    }
    Ok(EvalReport::new(settings.clone(), rows))
}

/// Scores precomputed outputs against references of the same size.
pub fn evaluate_pairs(pairs: &[(String, Image, Image)], settings: &EvalSettings) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::usage("evaluation set is empty"));
    }
    let rows = pairs
        .iter()
        .map(|(name, sr, hr)| score(name, sr, hr, settings))
        .collect::<Result<_>>()?;
    Ok(EvalReport::new(settings.clone(), rows))
}

fn score(name: &str, sr: &Image, hr: &Image, s: &EvalSettings) -> Result<EvalRow> {
    Ok(EvalRow {
        name: name.to_string(),
        psnr: psnr(sr, hr, s.channel, s.shave)?,
        ssim: ssim(sr, hr, s.channel, s.shave)?,
    })
}
