//! Image reconstruction net: the joint four-sub-band clique up-sampler, the
//! baseline up-samplers it is compared against, and the RGB head.

use rand::Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvPRelu, ConvTranspose2d, PRelu, ResidualBlock};
use crate::scalar::Scalar;
use crate::wavelet::Band;

/// Up-sampling module variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpKind {
    /// Joint sub-band learning: extraction, self residual, refinement, IDWT.
    #[default]
    Clique,
    /// Each band from the input features alone, no cross-band edges.
    CliqueNoJoint,
    /// Stride-2 transposed convolution.
    Deconv,
    /// Convolution to 4p channels and periodic shuffle.
    SubPixel,
}

impl UpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clique" | "cu" => Ok(UpKind::Clique),
            "clique_nojoint" | "cu-" => Ok(UpKind::CliqueNoJoint),
            "deconv" | "dc" => Ok(UpKind::Deconv),
            "subpixel" | "sc" => Ok(UpKind::SubPixel),
            other => Err(Error::usage(format!("unknown up_kind `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            UpKind::Clique => "CU",
            UpKind::CliqueNoJoint => "CU-",
            UpKind::Deconv => "DC",
            UpKind::SubPixel => "SC",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            UpKind::Clique => "clique",
            UpKind::CliqueNoJoint => "clique_nojoint",
            UpKind::Deconv => "deconv",
            UpKind::SubPixel => "subpixel",
        }
    }
}

/// Per-band node handles of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandVars {
    pub ll: Var,
    pub hl: Var,
    pub lh: Var,
    pub hh: Var,
}

impl BandVars {
    pub fn get(&self, band: Band) -> Var {
        match band {
            Band::LL => self.ll,
            Band::HL => self.hl,
            Band::LH => self.lh,
            Band::HH => self.hh,
        }
    }
}

/// Every intermediate stage of one clique up-sampling pass.
#[derive(Clone, Copy, Debug)]
pub struct UpsampleTrace {
    pub extracted: BandVars,
    pub residual: BandVars,
    pub refined: BandVars,
    pub output: Var,
}

/// Residual-block counts per band, in LL, HL, LH, HH order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandCounts {
    pub ll: usize,
    pub hl: usize,
    pub lh: usize,
    pub hh: usize,
}

impl BandCounts {
    pub const fn new(ll: usize, hl: usize, lh: usize, hh: usize) -> Self {
        BandCounts { ll, hl, lh, hh }
    }

    pub fn get(&self, band: Band) -> usize {
        match band {
            Band::LL => self.ll,
            Band::HL => self.hl,
            Band::LH => self.lh,
            Band::HH => self.hh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CliqueUpsample {
    pub c: usize,
    pub p: usize,
    pub counts: BandCounts,
    /// Extraction maps indexed by `Band as usize`.
    pub extract: [ConvPRelu; 4],
    pub residual: [Vec<ResidualBlock>; 4],
    /// Refinement maps for LH, HL and LL; absent in the non-joint variant.
    pub refine: Option<Refinement>,
}

#[derive(Clone, Debug)]
pub struct Refinement {
    /// [HH, LH] → LH, 2p → p.
    pub lh: ConvPRelu,
    /// [HH, HL] → HL, 2p → p.
    pub hl: ConvPRelu,
    /// [HH, LH, HL, LL] → LL, 4p → p.
    pub ll: ConvPRelu,
}

impl CliqueUpsample {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        p: usize,
        counts: BandCounts,
        joint: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if c == 0 || p == 0 {
            return Err(Error::usage("clique up-sampler needs positive c and p"));
        }
        let ext_in = |band: Band| match (joint, band) {
            (false, _) | (true, Band::LL) => c,
            (true, Band::HL) | (true, Band::LH) => c + p,
            (true, Band::HH) => c + 3 * p,
        };
        let mut mk_ext = |band: Band| ConvPRelu::new(store, &format!("{name}.ext.{}", band.name()), ext_in(band), p, rng);
        let extract = [mk_ext(Band::LL)?, mk_ext(Band::HL)?, mk_ext(Band::LH)?, mk_ext(Band::HH)?];
        let mut mk_res = |band: Band| {
            (0..counts.get(band))
                .map(|i| ResidualBlock::new(store, &format!("{name}.res.{}.{}", band.name(), i + 1), p, rng))
                .collect::<Result<Vec<_>>>()
        };
        let residual = [
            mk_res(Band::LL)?,
            mk_res(Band::HL)?,
            mk_res(Band::LH)?,
            mk_res(Band::HH)?,
        ];
        let refine = if joint {
            Some(Refinement {
                lh: ConvPRelu::new(store, &format!("{name}.ref.lh"), 2 * p, p, rng)?,
                hl: ConvPRelu::new(store, &format!("{name}.ref.hl"), 2 * p, p, rng)?,
                ll: ConvPRelu::new(store, &format!("{name}.ref.ll"), 4 * p, p, rng)?,
            })
        } else {
            None
        };
        Ok(CliqueUpsample {
            c,
            p,
            counts,
            extract,
            residual,
            refine,
        })
    }

    pub fn is_joint(&self) -> bool {
        self.refine.is_some()
    }

    /// LL from the features; HL and LH from [features, LL]; HH from
    /// [features, LL, HL, LH]. The non-joint variant feeds every band the
    /// features alone.
    pub fn extraction<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<BandVars> {
        let c = g.shape(f).c();
        if c != self.c {
            return Err(Error::dim("subband_extraction", "C", self.c, c));
        }
        let [e_ll, e_hl, e_lh, e_hh] = &self.extract;
        if !self.is_joint() {
            return Ok(BandVars {
                ll: e_ll.forward(g, f)?,
                hl: e_hl.forward(g, f)?,
                lh: e_lh.forward(g, f)?,
                hh: e_hh.forward(g, f)?,
            });
        }
        let ll = e_ll.forward(g, f)?;
        let f_ll = g.concat(&[f, ll])?;
        let hl = e_hl.forward(g, f_ll)?;
        let lh = e_lh.forward(g, f_ll)?;
        let f_all = g.concat(&[f, ll, hl, lh])?;
        let hh = e_hh.forward(g, f_all)?;
        Ok(BandVars { ll, hl, lh, hh })
    }

    /// Each band through its own residual chain; bands stay independent.
    pub fn self_residual<T: Scalar>(&self, g: &mut Graph<'_, T>, q: BandVars) -> Result<BandVars> {
        let mut run = |band: Band| -> Result<Var> {
            let mut x = q.get(band);
            let c = g.shape(x).c();
            if c != self.p {
                return Err(Error::dim("self_residual", "C", self.p, c));
            }
            for block in &self.residual[band as usize] {
                x = block.forward(g, x)?;
            }
            Ok(x)
        };
        Ok(BandVars {
            ll: run(Band::LL)?,
            hl: run(Band::HL)?,
            lh: run(Band::LH)?,
            hh: run(Band::HH)?,
        })
    }

    /// HH passes through; LH from [HH, LH]; HL from [HH, HL]; LL from
    /// [HH, LH', HL', LL]. There is no edge between HL and LH.
    pub fn refinement<T: Scalar>(&self, g: &mut Graph<'_, T>, q: BandVars) -> Result<BandVars> {
        for band in Band::ALL {
            let c = g.shape(q.get(band)).c();
            if c != self.p {
                return Err(Error::dim("subband_refinement", "C", self.p, c));
            }
        }
        let Some(r) = &self.refine else {
            return Ok(q);
        };
        let hh = q.hh;
        let x = g.concat(&[hh, q.lh])?;
        let lh = r.lh.forward(g, x)?;
        let x = g.concat(&[hh, q.hl])?;
        let hl = r.hl.forward(g, x)?;
        let x = g.concat(&[hh, lh, hl, q.ll])?;
        let ll = r.ll.forward(g, x)?;
        Ok(BandVars { ll, hl, lh, hh })
    }

    pub fn trace<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<UpsampleTrace> {
        let extracted = self.extraction(g, f)?;
        let residual = self.self_residual(g, extracted)?;
        let refined = self.refinement(g, residual)?;
        let output = g.idwt2(refined.ll, refined.hl, refined.lh, refined.hh)?;
        Ok(UpsampleTrace {
            extracted,
            residual,
            refined,
            output,
        })
    }

    /// (N, c, H, W) → (N, p, 2H, 2W).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        Ok(self.trace(g, f)?.output)
    }
}

#[derive(Clone, Debug)]
pub enum Upsampler {
    Clique(CliqueUpsample),
    Deconv { deconv: ConvTranspose2d, act: PRelu },
    SubPixel { conv: Conv2d, act: PRelu },
}

impl Upsampler {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: UpKind,
        c: usize,
        p: usize,
        counts: BandCounts,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            UpKind::Clique => Upsampler::Clique(CliqueUpsample::new(store, name, c, p, counts, true, rng)?),
            UpKind::CliqueNoJoint => Upsampler::Clique(CliqueUpsample::new(store, name, c, p, counts, false, rng)?),
            UpKind::Deconv => Upsampler::Deconv {
                deconv: ConvTranspose2d::new(store, &format!("{name}.deconv"), c, p, 4, 2, 1, rng)?,
                act: PRelu::new(store, &format!("{name}.act"), p)?,
            },
            UpKind::SubPixel => Upsampler::SubPixel {
                conv: Conv2d::new(store, &format!("{name}.subpixel"), c, 4 * p, 3, rng)?,
                act: PRelu::new(store, &format!("{name}.act"), p)?,
            },
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        match self {
            Upsampler::Clique(cu) => cu.forward(g, f),
            Upsampler::Deconv { deconv, act } => {
                let y = deconv.forward(g, f)?;
                act.forward(g, y)
            }
            Upsampler::SubPixel { conv, act } => {
                let y = conv.forward(g, f)?;
                let y = g.pixel_shuffle(y, 2)?;
                act.forward(g, y)
            }
        }
    }

    pub fn as_clique(&self) -> Option<&CliqueUpsample> {
        match self {
            Upsampler::Clique(cu) => Some(cu),
            _ => None,
        }
    }
}

/// Up-sampler followed by the p → 3 reconstruction convolution.
#[derive(Clone, Debug)]
pub struct Irn {
    pub up: Upsampler,
    pub final_conv: Conv2d,
}

impl Irn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: UpKind,
        c: usize,
        p: usize,
        counts: BandCounts,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Irn {
            up: Upsampler::new(store, name, kind, c, p, counts, rng)?,
            final_conv: Conv2d::new(store, &format!("{name}.final"), p, 3, 3, rng)?,
        })
    }

    /// Returns (up-sampled features, 3-channel prediction).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<(Var, Var)> {
        let feat = self.up.forward(g, f)?;
        let pred = self.final_conv.forward(g, feat)?;
        Ok((feat, pred))
    }
}

/// Influence below this counts as no dependency.
pub const PROBE_ZERO: f64 = 1e-12;

/// One source → band dependency measured by perturbation.
#[derive(Clone, Debug)]
pub struct EdgeProbe {
    pub stage: &'static str,
    pub source: String,
    pub target: Band,
    pub expected: bool,
    /// Max absolute change of the target band.
    pub influence: f64,
}

impl EdgeProbe {
    pub fn holds(&self) -> bool {
        (self.influence > PROBE_ZERO) == self.expected
    }
}

fn band_values(g: &Graph<'_, f64>, q: &BandVars) -> [crate::tensor::Tensor<f64>; 4] {
    Band::ALL.map(|b| g.value(q.get(b)).clone())
}

/// Expected edges of each stage, keyed by source band (or map) and target band.
fn expected_edge(stage: &str, joint: bool, src: Band, dst: Band) -> bool {
    use Band::*;
    match (stage, joint) {
        ("extraction", true) => matches!(
            (src, dst),
            (LL, _) | (HL, HL) | (HL, HH) | (LH, LH) | (LH, HH) | (HH, HH)
        ),
        ("refinement", true) => matches!(
            (src, dst),
            (HH, _) | (LH, LH) | (LH, LL) | (HL, HL) | (HL, LL) | (LL, LL)
        ),
        _ => src == dst,
    }
}

/// Perturbation probes over a small random clique up-sampler (c = 8, p = 4,
/// one residual block per band). Extraction is probed through each band's
/// map weights; self residual and refinement through their band inputs and
/// residual weights. Every edge of the stage equations must move its target
/// and every other pair must leave it bit-for-bit unchanged.
pub fn dependency_probes(joint: bool, seed: u64) -> Result<Vec<EdgeProbe>> {
    use rand::SeedableRng;

    use crate::tensor::{Shape, Tensor};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (c, p) = (8, 4);
    let mut store = ParamStore::<f64>::new();
    let cu = CliqueUpsample::new(&mut store, "cu", c, p, BandCounts::new(1, 1, 1, 1), joint, &mut rng)?;
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        let shape = store.value(id).shape();
        *store.value_mut(id) = Tensor::uniform(shape, -0.5, 0.5, &mut rng);
    }
    let f = Tensor::uniform(Shape::new(1, c, 4, 4), -1.0, 1.0, &mut rng);
    let quad: [Tensor<f64>; 4] = Band::ALL.map(|_| Tensor::uniform(Shape::new(1, p, 4, 4), -1.0, 1.0, &mut rng));

    let extract = |store: &ParamStore<f64>| -> Result<[Tensor<f64>; 4]> {
        let mut g = Graph::inference(store);
        let x = g.constant(f.clone());
        let q = cu.extraction(&mut g, x)?;
        Ok(band_values(&g, &q))
    };
    let on_quad = |store: &ParamStore<f64>, q: &[Tensor<f64>; 4], refine: bool| -> Result<[Tensor<f64>; 4]> {
        let mut g = Graph::inference(store);
        let [ll, hl, lh, hh] = q.clone().map(|t| g.constant(t));
        let vars = BandVars { ll, hl, lh, hh };
        let out = if refine {
            cu.refinement(&mut g, vars)?
        } else {
            cu.self_residual(&mut g, vars)?
        };
        Ok(band_values(&g, &out))
    };
    let perturb_params = |prefix: &str, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut s = store.clone();
        for &id in &ids {
            if s.name(id).starts_with(prefix) {
                let shape = s.value(id).shape();
                let noise = Tensor::uniform(shape, -0.5, 0.5, rng);
                *s.value_mut(id) = s.value(id).add(&noise).expect("same shape");
            }
        }
        s
    };
    let mut probes = Vec::new();
    let mut record = |stage: &'static str, source: String, base: &[Tensor<f64>; 4], moved: &[Tensor<f64>; 4], expect: &dyn Fn(Band) -> bool| {
        for dst in Band::ALL {
            probes.push(EdgeProbe {
                stage,
                source: source.clone(),
                target: dst,
                expected: expect(dst),
                influence: base[dst as usize].max_abs_diff(&moved[dst as usize]),
            });
        }
    };

    let base = extract(&store)?;
    for src in Band::ALL {
        let s = perturb_params(&format!("cu.ext.{}.", src.name()), &mut rng);
        let moved = extract(&s)?;
        record("extraction", format!("H1_{}", src.name()), &base, &moved, &|d| {
            expected_edge("extraction", joint, src, d)
        });
    }

    for (stage, refine) in [("self_residual", false), ("refinement", true)] {
        let base = on_quad(&store, &quad, refine)?;
        for src in Band::ALL {
            let mut q = quad.clone();
            let noise = Tensor::uniform(q[src as usize].shape(), -0.5, 0.5, &mut rng);
            q[src as usize] = q[src as usize].add(&noise)?;
            let moved = on_quad(&store, &q, refine)?;
            record(stage, format!("F_{}", src.name()), &base, &moved, &|d| {
                expected_edge(stage, joint, src, d)
            });
        }
    }

    let base = on_quad(&store, &quad, false)?;
    for src in Band::ALL {
        let s = perturb_params(&format!("cu.res.{}.", src.name()), &mut rng);
        let moved = on_quad(&s, &quad, false)?;
        record("self_residual", format!("R_{}", src.name()), &base, &moved, &|d| d == src);
    }
    Ok(probes)
}
