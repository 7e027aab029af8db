//! Full 2^J model: feature net, one up-sampling level per factor of two,
//! per-level RGB heads and the pyramid loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::data::augment::Dihedral;
use crate::data::preprocess::PreprocessMode;
use crate::error::{Error, Result};
use crate::fen::{Fen, FenKind};
use crate::irn::{BandCounts, Irn, UpKind, UpsampleTrace};
use crate::layers::Conv2d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Up-sampling module sizes for one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelConfig {
    pub c: usize,
    pub p: usize,
    pub counts: BandCounts,
}

/// Architecture, preprocessing and ablation selectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub fen_blocks: usize,
    pub fen_layers: usize,
    pub fen_growth: usize,
    /// One entry per level; the magnification is `2^levels.len()`.
    pub levels: Vec<LevelConfig>,
    pub fen_kind: FenKind,
    pub up_kind: UpKind,
    pub mode: PreprocessMode,
    pub ll_scale: f64,
}

const TABLE1_COUNTS: BandCounts = BandCounts::new(2, 3, 3, 4);

impl ModelConfig {
    /// 15 blocks of 4 layers with growth 32; one level with c = 1920, p = 480.
    pub fn table1_x2() -> Self {
        ModelConfig {
            fen_blocks: 15,
            fen_layers: 4,
            fen_growth: 32,
            levels: vec![LevelConfig {
                c: 1920,
                p: 480,
                counts: TABLE1_COUNTS,
            }],
            ..Self::tiny()
        }
    }

    /// Same feature net; levels (2400, 600) and (600, 300).
    pub fn table1_x4() -> Self {
        ModelConfig {
            levels: vec![
                LevelConfig {
                    c: 2400,
                    p: 600,
                    counts: TABLE1_COUNTS,
                },
                LevelConfig {
                    c: 600,
                    p: 300,
                    counts: TABLE1_COUNTS,
                },
            ],
            ..Self::table1_x2()
        }
    }

    /// Gradient-check scale: 2 blocks, l = 2, g = 2, p = 4, one residual block per band.
    pub fn tiny() -> Self {
        ModelConfig {
            fen_blocks: 2,
            fen_layers: 2,
            fen_growth: 2,
            levels: vec![LevelConfig {
                c: 8,
                p: 4,
                counts: BandCounts::new(1, 1, 1, 1),
            }],
            fen_kind: FenKind::Clique,
            up_kind: UpKind::Clique,
            mode: PreprocessMode::LlScaled,
            ll_scale: 4.0,
        }
    }

    /// Desk-training scale: 2 blocks, l = 3, g = 8, p = 16.
    pub fn desk() -> Self {
        ModelConfig {
            fen_blocks: 2,
            fen_layers: 3,
            fen_growth: 8,
            levels: vec![LevelConfig {
                c: 48,
                p: 16,
                counts: BandCounts::new(1, 1, 1, 1),
            }],
            ..Self::tiny()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn scale(&self) -> usize {
        1 << self.levels.len()
    }

    /// `n·l·g`, the channel count of the feature net output.
    pub fn fen_channels(&self) -> usize {
        self.fen_blocks * self.fen_layers * self.fen_growth
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::usage("model needs at least one level"));
        }
        if self.fen_blocks == 0 || self.fen_layers == 0 || self.fen_growth == 0 {
            return Err(Error::usage("fen_blocks, fen_layers and fen_growth must be positive"));
        }
        for (j, lvl) in self.levels.iter().enumerate() {
            if lvl.c == 0 || lvl.p == 0 {
                return Err(Error::usage(format!("level {}: c and p must be positive", j + 1)));
            }
        }
        if !(self.ll_scale > 0.0) {
            return Err(Error::usage("ll_scale must be positive"));
        }
        Ok(())
    }

    /// Channel and spatial arithmetic for an `h × w` input, without building anything.
    pub fn shape_plan(&self, h: usize, w: usize) -> ShapePlan {
        let mut levels = Vec::with_capacity(self.levels.len());
        let mut prev = self.fen_channels();
        let (mut lh, mut lw) = (h, w);
        for lvl in &self.levels {
            levels.push(LevelPlan {
                input_channels: prev,
                adapter: prev != lvl.c,
                c: lvl.c,
                p: lvl.p,
                out: (lvl.p, 2 * lh, 2 * lw),
                prediction: (3, 2 * lh, 2 * lw),
            });
            prev = lvl.p;
            lh *= 2;
            lw *= 2;
        }
        ShapePlan {
            f1_channels: self.fen_channels(),
            fen: (self.fen_channels(), h, w),
            levels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelPlan {
    pub input_channels: usize,
    /// Whether a 1×1 adapter precedes this level's up-sampler.
    pub adapter: bool,
    pub c: usize,
    pub p: usize,
    /// Up-sampler output (channels, height, width).
    pub out: (usize, usize, usize),
    pub prediction: (usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub f1_channels: usize,
    pub fen: (usize, usize, usize),
    pub levels: Vec<LevelPlan>,
}

#[derive(Clone, Debug)]
pub struct Level {
    /// 1×1 channel adapter, present whenever the incoming channel count differs from `c`
    /// and always from level 2 on.
    pub adapter: Option<Conv2d>,
    pub irn: Irn,
}

/// Node handles of one pyramid forward pass.
#[derive(Clone, Debug)]
pub struct PyramidVars {
    pub fen: Var,
    /// Up-sampled features per level, before the head.
    pub features: Vec<Var>,
    pub predictions: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub fen: Fen,
    pub levels: Vec<Level>,
}

/// Checkpoint prefix of level `j` (1-based).
pub fn level_prefix(j: usize) -> String {
    if j == 1 {
        "irn".to_string()
    } else {
        format!("irn{j}")
    }
}

impl<T: Scalar> Model<T> {
    /// Builds and initialises every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fen = Fen::new(
            &mut store,
            "fen",
            config.fen_blocks,
            config.fen_layers,
            config.fen_growth,
            config.fen_kind,
            &mut rng,
        )?;
        let mut levels = Vec::with_capacity(config.levels.len());
        let mut prev = fen.out_channels();
        for (i, lvl) in config.levels.iter().enumerate() {
            let prefix = level_prefix(i + 1);
            let adapter = if i > 0 || prev != lvl.c {
                Some(Conv2d::new(&mut store, &format!("{prefix}.adapter"), prev, lvl.c, 1, &mut rng)?)
            } else {
                None
            };
            let irn = Irn::new(&mut store, &prefix, config.up_kind, lvl.c, lvl.p, lvl.counts, &mut rng)?;
            levels.push(Level { adapter, irn });
            prev = lvl.p;
        }
        Ok(Model {
            config,
            store,
            fen,
            levels,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Runs the feature net and every level. Level `j + 1` consumes level `j`'s
    /// pre-head features.
    pub fn forward_pyramid(&self, g: &mut Graph<'_, T>, lr: Var) -> Result<PyramidVars> {
        let fen = self.fen.forward(g, lr)?;
        let mut x = fen;
        let mut features = Vec::with_capacity(self.levels.len());
        let mut predictions = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            if let Some(a) = &level.adapter {
                x = a.forward(g, x)?;
            }
            let (feat, pred) = level.irn.forward(g, x)?;
            features.push(feat);
            predictions.push(pred);
            x = feat;
        }
        Ok(PyramidVars {
            fen,
            features,
            predictions,
        })
    }

    /// Level-1 up-sampler stages, for inspection. `None` for non-clique up-samplers.
    pub fn trace_level1(&self, g: &mut Graph<'_, T>, lr: Var) -> Result<Option<UpsampleTrace>> {
        let Some(cu) = self.levels[0].irn.up.as_clique() else {
            return Ok(None);
        };
        let mut x = self.fen.forward(g, lr)?;
        if let Some(a) = &self.levels[0].adapter {
            x = a.forward(g, x)?;
        }
        cu.trace(g, x).map(Some)
    }

    /// Inference: every level's prediction for a preprocessed `lr` batch.
    pub fn predict(&self, lr: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::inference(&self.store);
        let x = g.constant(lr.clone());
        let out = self.forward_pyramid(&mut g, x)?;
        Ok(out.predictions.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Final-level prediction only.
    pub fn predict_final(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut preds = self.predict(lr)?;
        Ok(preds.pop().expect("at least one level"))
    }
}

/// `L = Σ_j mean(|I^j − Î^j|)`.
pub fn pyramid_loss<T: Scalar>(g: &mut Graph<'_, T>, preds: &[Var], targets: &[Tensor<T>]) -> Result<Var> {
    if preds.len() != targets.len() {
        return Err(Error::dim("pyramid_loss", "levels", preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(Error::usage("pyramid loss over zero levels"));
    }
    let terms = preds
        .iter()
        .zip(targets)
        .map(|(&p, t)| g.mae_loss(p, t))
        .collect::<Result<Vec<_>>>()?;
    g.sum(&terms)
}

/// Average of `infer` over the given dihedral transforms: each input copy is
/// transformed, inferred and mapped back before averaging.
pub fn self_ensemble<T, F>(x: &Tensor<T>, transforms: &[Dihedral], mut infer: F) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if transforms.is_empty() {
        return Err(Error::usage("self-ensemble needs at least one transform"));
    }
    let mut acc: Option<Tensor<T>> = None;
    for &t in transforms {
        let y = t.inverse().apply(&infer(&t.apply(x))?);
        acc = Some(match acc {
            None => y,
            Some(a) => a.add(&y)?,
        });
    }
    let n = T::from_usize(transforms.len()).expect("small count");
    Ok(acc.expect("non-empty").map(|v| v / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn table1_plans() {
        let p2 = ModelConfig::table1_x2().shape_plan(16, 16);
        assert_eq!(p2.f1_channels, 1920);
        assert_eq!(p2.fen, (1920, 16, 16));
        assert_eq!(p2.levels[0].out, (480, 32, 32));
        assert!(!p2.levels[0].adapter);
        let p4 = ModelConfig::table1_x4().shape_plan(8, 8);
        assert!(p4.levels[0].adapter, "1920 → 2400 needs an adapter");
        assert_eq!(p4.levels[1].input_channels, 600);
        assert_eq!(p4.levels[1].out, (300, 32, 32));
    }

    #[test]
    fn predictions_double_per_level() {
        let mut cfg = ModelConfig::tiny();
        cfg.levels.push(LevelConfig {
            c: 6,
            p: 4,
            counts: BandCounts::new(1, 0, 1, 0),
        });
        let model = Model::<f64>::new(cfg.clone(), 3).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 3, 5, 3), |[_, c, y, x]| (c + 2 * y + x) as f64 * 0.1);
        let preds = model.predict(&x).unwrap();
        assert_eq!(preds[0].shape(), Shape::new(1, 3, 10, 6));
        assert_eq!(preds[1].shape(), Shape::new(1, 3, 20, 12));
        let plan = cfg.shape_plan(5, 3);
        assert_eq!(plan.levels[1].prediction, (3, 20, 12));
    }

    #[test]
    fn level_adapters_are_named_and_present() {
        let mut cfg = ModelConfig::tiny();
        cfg.levels[0].c = 10;
        cfg.levels.push(cfg.levels[0]);
        let model = Model::<f64>::new(cfg, 0).unwrap();
        assert!(model.store.id("irn.adapter.weight").is_some());
        assert!(model.store.id("irn2.adapter.weight").is_some());
        assert!(model.store.id("irn2.ext.hh.conv.weight").is_some());
        assert!(model.store.id("irn.final.weight").is_some());
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 11).unwrap();
        let again = Model::<f64>::new(ModelConfig::tiny(), 11).unwrap();
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 4), |[n, c, y, x]| ((n + c * 3 + y * 5 + x * 7) % 11) as f64 / 11.0);
        assert_eq!(model.predict(&x).unwrap(), again.predict(&x).unwrap());
    }

    #[test]
    fn pyramid_loss_sums_levels() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let s = Shape::new(1, 1, 2, 2);
        let a = g.constant(Tensor::zeros(s));
        let b = g.constant(Tensor::zeros(s));
        let loss = pyramid_loss(&mut g, &[a, b], &[Tensor::full(s, 0.1), Tensor::full(s, -0.3)]).unwrap();
        assert!((g.scalar(loss) - 0.4).abs() < 1e-15);
        assert!(matches!(
            pyramid_loss(&mut g, &[a], &[Tensor::full(s, 0.0), Tensor::full(s, 0.0)]),
            Err(Error::Dimension { .. })
        ));
    }

    fn ramp(shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |[n, c, y, x]| ((n * 7 + c * 5 + y * 3 + x * 11) % 13) as f64 / 13.0 - 0.3)
    }

    /// Nearest-neighbour 2× upsample; commutes with every dihedral transform.
    fn nearest2(x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let s = x.shape();
        Ok(Tensor::from_fn(s.with_hw(2 * s.h(), 2 * s.w()), |[n, c, y, xx]| x.at(n, c, y / 2, xx / 2)))
    }

    #[test]
    fn identity_only_ensemble_is_plain_inference() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 5).unwrap();
        let x = ramp(Shape::new(1, 3, 5, 4));
        let plain = model.predict_final(&x).unwrap();
        let ens = self_ensemble(&x, &[Dihedral::ALL[0]], |t| model.predict_final(t)).unwrap();
        assert_eq!(plain, ens);
    }

    #[test]
    fn equivariant_mock_is_unchanged_by_ensembling() {
        let x = ramp(Shape::new(1, 3, 3, 5));
        let plain = nearest2(&x).unwrap();
        let ens = self_ensemble(&x, &Dihedral::ALL, nearest2).unwrap();
        assert!(plain.max_abs_diff(&ens) < 1e-12);
    }

    #[test]
    fn ensemble_ignores_transform_order() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 8).unwrap();
        let x = ramp(Shape::new(1, 3, 4, 6));
        let fwd = self_ensemble(&x, &Dihedral::ALL, |t| model.predict_final(t)).unwrap();
        let mut rev = Dihedral::ALL;
        rev.reverse();
        let back = self_ensemble(&x, &rev, |t| model.predict_final(t)).unwrap();
        assert!(fwd.max_abs_diff(&back) < 1e-12);
        assert!(self_ensemble(&x, &[], |t| model.predict_final(t)).is_err());
    }

    #[test]
    fn single_level_prediction_is_fen_then_irn() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 2).unwrap();
        let x = ramp(Shape::new(1, 3, 4, 4));
        let mut g = Graph::inference(&model.store);
        let v = g.constant(x.clone());
        let f = model.fen.forward(&mut g, v).unwrap();
        assert!(model.levels[0].adapter.is_none());
        let (_, pred) = model.levels[0].irn.forward(&mut g, f).unwrap();
        assert_eq!(g.value(pred), &model.predict_final(&x).unwrap());
    }

    #[test]
    fn level_one_learns_when_level_two_is_exact() {
        let mut cfg = ModelConfig::tiny();
        cfg.levels.push(cfg.levels[0]);
        let model = Model::<f64>::new(cfg, 4).unwrap();
        let x = ramp(Shape::new(1, 3, 3, 3));
        let exact2 = model.predict(&x).unwrap().pop().unwrap();
        let target1 = Tensor::full(Shape::new(1, 3, 6, 6), 0.5);
        let mut g = Graph::new(&model.store);
        let v = g.constant(x);
        let out = model.forward_pyramid(&mut g, v).unwrap();
        let loss = pyramid_loss(&mut g, &out.predictions, &[target1, exact2]).unwrap();
        let grads = g.backward(loss).unwrap();
        let head1 = grads.get(model.store.id("irn.final.weight").unwrap()).unwrap();
        let head2 = grads.get(model.store.id("irn2.final.weight").unwrap()).unwrap();
        assert!(head1.max_abs() > 0.0);
        assert_eq!(head2.max_abs(), 0.0);
        let fen = grads.get(model.store.id("fen.conv1.weight").unwrap()).unwrap();
        assert!(fen.max_abs() > 0.0);
    }
}
