//! The eight dihedral transforms of the square, on the spatial axes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::patches::SamplePair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    /// Quarter turn counter-clockwise.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Swap rows and columns.
    Transpose,
    /// Mirror about the anti-diagonal.
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn inverse(self) -> Self {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            other => other,
        }
    }

    /// Whether height and width trade places.
    pub fn swaps_axes(self) -> bool {
        matches!(
            self,
            Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose
        )
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..8)]
    }

    /// Source (y, x) read by output (y, x) of an `h × w` input.
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (y, x),
            Dihedral::Rot90 => (x, w - 1 - y),
            Dihedral::Rot180 => (h - 1 - y, w - 1 - x),
            Dihedral::Rot270 => (h - 1 - x, y),
            Dihedral::FlipH => (y, w - 1 - x),
            Dihedral::FlipV => (h - 1 - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (h - 1 - x, w - 1 - y),
        }
    }

    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let s = t.shape();
        let (h, w) = (s.h(), s.w());
        let out_shape = if self.swaps_axes() { s.with_hw(w, h) } else { s };
        Tensor::from_fn(out_shape, |[n, c, y, x]| {
            let (sy, sx) = self.source(y, x, h, w);
            t.at(n, c, sy, sx)
        })
    }
}

/// Applies one transform to the LR patch and every HR level alike.
pub fn augment<T: Scalar>(pair: &SamplePair<T>, t: Dihedral) -> Result<SamplePair<T>> {
    let square = |s: Shape| s.h() == s.w();
    if t.swaps_axes() && !(square(pair.lr.shape()) && pair.hr_levels.iter().all(|h| square(h.shape()))) {
        return Err(Error::usage("rotating augmentation needs square patches"));
    }
    Ok(SamplePair {
        lr: t.apply(&pair.lr),
        hr_levels: pair.hr_levels.iter().map(|h| t.apply(h)).collect(),
    })
}
