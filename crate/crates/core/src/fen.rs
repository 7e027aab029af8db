//! Feature embedding net: entry convolutions, res-clique blocks and the
//! clique block group with its global skip connection.
//!
//! A clique block with `l` layers of growth `g` keeps one g→g convolution
//! `W[k→i]` per ordered layer pair and one lg→g input convolution `W[0→i]`.
//! Stage one runs layers 1..l in order, each fed by the block input and the
//! earlier stage-one layers. Stage two reruns layers 1..l, each fed by the
//! already refreshed earlier layers and the stage-one outputs of the later
//! layers, reusing the very same pair weights. The block output is the
//! concatenated stage-two layers plus the block input.

use rand::Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, PRelu, ResidualBlock};
use crate::scalar::Scalar;

/// Feature extractor used inside the block group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FenKind {
    /// Res-clique block (two-stage propagation plus residual).
    #[default]
    Clique,
    /// Residual block of two convolutions over all lg channels.
    Residual,
    /// Dense block: stage one only, plus the same residual.
    Dense,
}

impl FenKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clique" | "cb" => Ok(FenKind::Clique),
            "residual" | "rb" => Ok(FenKind::Residual),
            "dense" | "db" => Ok(FenKind::Dense),
            other => Err(Error::usage(format!("unknown fen_kind `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FenKind::Clique => "CB",
            FenKind::Residual => "RB",
            FenKind::Dense => "DB",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            FenKind::Clique => "clique",
            FenKind::Residual => "residual",
            FenKind::Dense => "dense",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CliqueBlock {
    pub layers: usize,
    pub growth: usize,
    /// `input[i]` is `W[0→i+1]`, lg→g.
    pub input: Vec<Conv2d>,
    /// `pair[k][i]` is `W[k+1→i+1]`, g→g; `None` on the diagonal and, for
    /// stage-one-only blocks, wherever `k > i`.
    pub pair: Vec<Vec<Option<Conv2d>>>,
    /// One activation per layer, shared by both stages.
    pub act: Vec<PRelu>,
    pub two_stage: bool,
}

impl CliqueBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        layers: usize,
        growth: usize,
        two_stage: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || growth == 0 {
            return Err(Error::usage("clique block needs positive layers and growth"));
        }
        let lg = layers * growth;
        let mut input = Vec::with_capacity(layers);
        for i in 0..layers {
            input.push(Conv2d::new(store, &format!("{name}.w0_{}", i + 1), lg, growth, 3, rng)?);
        }
        let mut pair = vec![vec![None; layers]; layers];
        for (k, row) in pair.iter_mut().enumerate() {
            for (i, slot) in row.iter_mut().enumerate() {
                if k == i || (!two_stage && k > i) {
                    continue;
                }
                *slot = Some(Conv2d::new(
                    store,
                    &format!("{name}.w{}_{}", k + 1, i + 1),
                    growth,
                    growth,
                    3,
                    rng,
                )?);
            }
        }
        let act = (0..layers)
            .map(|i| PRelu::new(store, &format!("{name}.act{}", i + 1), growth))
            .collect::<Result<_>>()?;
        Ok(CliqueBlock {
            layers,
            growth,
            input,
            pair,
            act,
            two_stage,
        })
    }

    pub fn channels(&self) -> usize {
        self.layers * self.growth
    }

    fn pair_conv(&self, from: usize, to: usize) -> &Conv2d {
        self.pair[from][to]
            .as_ref()
            .expect("pair weight exists for every used edge")
    }

    fn check_input<T: Scalar>(&self, g: &Graph<'_, T>, x0: Var) -> Result<()> {
        let c = g.shape(x0).c();
        if c != self.channels() {
            return Err(Error::dim("clique_block", "C", self.channels(), c));
        }
        Ok(())
    }

    /// `X1[i] = σ_i(Σ_{k<i} W[k→i] * X1[k] + W[0→i] * X0)`.
    pub fn stage_one<T: Scalar>(&self, g: &mut Graph<'_, T>, x0: Var) -> Result<Vec<Var>> {
        self.check_input(g, x0)?;
        let mut out: Vec<Var> = Vec::with_capacity(self.layers);
        for i in 0..self.layers {
            let mut terms = vec![self.input[i].forward(g, x0)?];
            for (k, &xk) in out.iter().enumerate() {
                terms.push(self.pair_conv(k, i).forward(g, xk)?);
            }
            let s = g.sum(&terms)?;
            out.push(self.act[i].forward(g, s)?);
        }
        Ok(out)
    }

    /// `X2[i] = σ_i(Σ_{k<i} W[k→i] * X2[k] + Σ_{k>i} W[k→i] * X1[k])`.
    ///
    /// With a single layer both sums are empty and the layer is `σ(0) = 0`.
    pub fn stage_two<T: Scalar>(&self, g: &mut Graph<'_, T>, stage1: &[Var]) -> Result<Vec<Var>> {
        if !self.two_stage {
            return Err(Error::usage("stage two on a stage-one-only block"));
        }
        if stage1.len() != self.layers {
            return Err(Error::dim("clique_stage_two", "layers", self.layers, stage1.len()));
        }
        for &x in stage1 {
            let c = g.shape(x).c();
            if c != self.growth {
                return Err(Error::dim("clique_stage_two", "C", self.growth, c));
            }
        }
        let mut out: Vec<Var> = Vec::with_capacity(self.layers);
        for i in 0..self.layers {
            let mut terms = Vec::with_capacity(self.layers - 1);
            for (k, &xk) in out.iter().enumerate() {
                terms.push(self.pair_conv(k, i).forward(g, xk)?);
            }
            for (k, &xk) in stage1.iter().enumerate().skip(i + 1) {
                terms.push(self.pair_conv(k, i).forward(g, xk)?);
            }
            let s = if terms.is_empty() {
                let shape = g.shape(stage1[i]);
                g.constant(crate::tensor::Tensor::zeros(shape))
            } else {
                g.sum(&terms)?
            };
            out.push(self.act[i].forward(g, s)?);
        }
        Ok(out)
    }

    /// Block output: `[X2[1], ..., X2[l]] + X0` (stage one only for dense blocks).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x0: Var) -> Result<Var> {
        let s1 = self.stage_one(g, x0)?;
        let layers = if self.two_stage { self.stage_two(g, &s1)? } else { s1 };
        let cat = g.concat(&layers)?;
        g.add(cat, x0)
    }
}

#[derive(Clone, Debug)]
pub enum FenBlock {
    Clique(CliqueBlock),
    Dense(CliqueBlock),
    Residual(ResidualBlock),
}

impl FenBlock {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            FenBlock::Clique(b) | FenBlock::Dense(b) => b.forward(g, x),
            FenBlock::Residual(b) => b.forward(g, x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fen {
    pub n_blocks: usize,
    pub layers: usize,
    pub growth: usize,
    /// 3 → n·l·g.
    pub conv1: Conv2d,
    /// n·l·g → l·g.
    pub conv2: Conv2d,
    pub blocks: Vec<FenBlock>,
}

impl Fen {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_blocks: usize,
        layers: usize,
        growth: usize,
        kind: FenKind,
        rng: &mut R,
    ) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::usage("feature net needs at least one block"));
        }
        let lg = layers * growth;
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), 3, n_blocks * lg, 3, rng)?;
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), n_blocks * lg, lg, 3, rng)?;
        let blocks = (0..n_blocks)
            .map(|i| {
                let bname = format!("{name}.block{}", i + 1);
                Ok(match kind {
                    FenKind::Clique => FenBlock::Clique(CliqueBlock::new(store, &bname, layers, growth, true, rng)?),
                    FenKind::Dense => FenBlock::Dense(CliqueBlock::new(store, &bname, layers, growth, false, rng)?),
                    FenKind::Residual => FenBlock::Residual(ResidualBlock::new(store, &bname, lg, rng)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Fen {
            n_blocks,
            layers,
            growth,
            conv1,
            conv2,
            blocks,
        })
    }

    /// Output channel count `n·l·g`.
    pub fn out_channels(&self) -> usize {
        self.n_blocks * self.layers * self.growth
    }

    /// `B_i = block_i(B_{i-1})` from `B_0 = f2`; returns `[B_1, ..., B_n]`.
    pub fn block_group<T: Scalar>(&self, g: &mut Graph<'_, T>, f2: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut b = f2;
        for block in &self.blocks {
            b = block.forward(g, b)?;
            outs.push(b);
        }
        g.concat(&outs)
    }

    /// `F_FEN = F_CBG + F_1`; spatial size is preserved.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        let c = g.shape(image).c();
        if c != 3 {
            return Err(Error::dim("fen_forward", "C", 3, c));
        }
        let f1 = self.conv1.forward(g, image)?;
        let f2 = self.conv2.forward(g, f1)?;
        let cbg = self.block_group(g, f2)?;
        g.add(cbg, f1)
    }
}
