//! Parameterised building blocks shared by the feature and reconstruction nets.

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Initial negative-region slope of every PReLU.
pub const PRELU_INIT: f64 = 0.25;

/// Convolution parameters: weight (cout, cin, k, k) and a per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Same-size convolution (`pad = (k - 1) / 2`) with fan-in scaled uniform
    /// weights and zero bias. Registers `{name}.weight` and `{name}.bias`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_geometry(store, name, cin, cout, k, 1, (k - 1) / 2, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geometry<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = kaiming_bound(cin * k * k);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(Shape::new(cout, cin, k, k), -bound, bound, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1)))?;
        Ok(Conv2d {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Transposed convolution: weight (cin, cout, k, k).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        // each output pixel sees about cin·(k/stride)² inputs
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        let bound = kaiming_bound(fan_in);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(Shape::new(cin, cout, k, k), -bound, bound, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1)))?;
        Ok(ConvTranspose2d {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let slope = store.add(
            format!("{name}.slope"),
            Tensor::full(Shape::new(channels, 1, 1, 1), T::from_f64_lossy(PRELU_INIT)),
        )?;
        Ok(PRelu { slope })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = g.param(self.slope);
        g.prelu(x, a)
    }
}

/// 3×3 convolution followed by PReLU.
#[derive(Clone, Debug)]
pub struct ConvPRelu {
    pub conv: Conv2d,
    pub act: PRelu,
}

impl ConvPRelu {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ConvPRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, rng)?,
            act: PRelu::new(store, &format!("{name}.act"), cout)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        self.act.forward(g, y)
    }
}

/// conv3×3 → PReLU → conv3×3, plus the identity skip. No activation after the sum.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub act: PRelu,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, rng)?,
            act: PRelu::new(store, &format!("{name}.act"), channels)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, x)?;
        let y = self.act.forward(g, y)?;
        let y = self.conv2.forward(g, y)?;
        g.add(x, y)
    }
}

/// Multiplier on the He bound. The block outputs are concatenated and summed
/// with skips, so full He variance makes the initial prediction ~15x the
/// target spread.
pub const INIT_SCALE: f64 = 0.25;

/// Uniform bound: He initialisation under PReLU(0.25), times `INIT_SCALE`.
fn kaiming_bound(fan_in: usize) -> f64 {
    let gain = 2.0 / (1.0 + PRELU_INIT * PRELU_INIT);
    INIT_SCALE * (3.0 * gain / fan_in.max(1) as f64).sqrt()
}
