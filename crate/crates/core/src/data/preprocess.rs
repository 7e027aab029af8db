//! The four input/target value modes and their inverses.
//!
//! 1: raw 0..255. 2: divided by 255. 3: divided by 255, per-channel training
//! mean subtracted. 4: mode 3, then the Haar LL band of every 2×2 block is
//! divided by `ll_scale` (`x ↦ idwt(scale_ll(dwt(x), s))`).
//!
//! The LL scaling shapes targets and the interpretation of predictions only;
//! the network input in mode 4 is the mode-3 image.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::{dwt2, idwt2, scale_ll, unscale_ll};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PreprocessMode {
    Raw,
    Unit,
    MeanCentred,
    #[default]
    LlScaled,
}

impl PreprocessMode {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(PreprocessMode::Raw),
            2 => Ok(PreprocessMode::Unit),
            3 => Ok(PreprocessMode::MeanCentred),
            4 => Ok(PreprocessMode::LlScaled),
            _ => Err(Error::usage(format!("preprocessing mode must be 1..4, got {n}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let n = s
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("preprocessing mode must be 1..4, got `{s}`")))?;
        Self::from_number(n)
    }

    pub fn number(self) -> u32 {
        match self {
            PreprocessMode::Raw => 1,
            PreprocessMode::Unit => 2,
            PreprocessMode::MeanCentred => 3,
            PreprocessMode::LlScaled => 4,
        }
    }

    /// Mode-4 targets need even spatial dimensions.
    pub fn needs_even(self) -> bool {
        self == PreprocessMode::LlScaled
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub mode: PreprocessMode,
    /// Per-channel training means in 0..1 units.
    pub means: [f64; 3],
    pub ll_scale: f64,
}

impl Preprocessor {
    pub fn new(mode: PreprocessMode, means: [f64; 3], ll_scale: f64) -> Result<Self> {
        if !(ll_scale > 0.0) {
            return Err(Error::usage("ll_scale must be positive"));
        }
        Ok(Preprocessor { mode, means, ll_scale })
    }

    fn affine<T: Scalar>(&self, t: &Tensor<T>, forward: bool) -> Result<Tensor<T>> {
        let s = t.shape();
        if s.c() != 3 {
            return Err(Error::dim("preprocess", "C", 3, s.c()));
        }
        let (div, sub) = match self.mode {
            PreprocessMode::Raw => (1.0, [0.0; 3]),
            PreprocessMode::Unit => (255.0, [0.0; 3]),
            PreprocessMode::MeanCentred | PreprocessMode::LlScaled => (255.0, self.means),
        };
        let mut out = t.clone();
        let plane = s.plane();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let m = sub[i % 3];
            for v in chunk {
                let x = v.to_f64_lossy();
                *v = T::from_f64_lossy(if forward { x / div - m } else { (x + m) * div });
            }
        }
        Ok(out)
    }

    /// Raw 0..255 LR values (N, 3, H, W) into network input units.
    pub fn input<T: Scalar>(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        self.affine(raw, true)
    }

    /// Raw 0..255 values (N, 3, H, W) into target units.
    pub fn forward<T: Scalar>(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.affine(raw, true)?;
        if self.mode == PreprocessMode::LlScaled {
            idwt2(&scale_ll(&dwt2(&x)?, self.ll_scale)?)
        } else {
            Ok(x)
        }
    }

    /// Network units back to raw 0..255 values (not rounded).
    pub fn inverse<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = if self.mode == PreprocessMode::LlScaled {
            idwt2(&unscale_ll(&dwt2(x)?, self.ll_scale)?)?
        } else {
            x.clone()
        };
        self.affine(&x, false)
    }
}
