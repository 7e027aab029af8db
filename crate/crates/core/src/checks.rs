//! Finite-difference suite over every differentiable operation and the tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Var};
use crate::error::Result;
use crate::fen::{CliqueBlock, Fen, FenKind};
use crate::irn::{BandCounts, Irn, UpKind};
use crate::model::{pyramid_loss, Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

/// Relative-error bound every entry of the suite must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

/// Treats `inputs` as parameters and checks `Σ r·op(inputs)` for a random `r`.
fn check_op<F>(inputs: &[Shape], rng: &mut ChaCha8Rng, op: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids = inputs
        .iter()
        .enumerate()
        .map(|(i, &s)| store.add(format!("input{i}"), Tensor::uniform(s, -1.0, 1.0, rng)))
        .collect::<Result<Vec<_>>>()?;
    let out_shape = {
        let mut g = Graph::inference(&store);
        let vars: Vec<_> = ids.iter().map(|&id| g.param(id)).collect();
        let y = op(&mut g, &vars)?;
        g.shape(y)
    };
    let readout = Tensor::uniform(out_shape, -1.0, 1.0, rng);
    grad_check(
        &mut store,
        |g| {
            let vars: Vec<_> = ids.iter().map(|&id| g.param(id)).collect();
            let y = op(g, &vars)?;
            g.dot(y, &readout)
        },
        &GradCheckOptions::default(),
    )
}

fn randomise(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let s = store.value(id).shape();
        *store.value_mut(id) = Tensor::uniform(s, -0.5, 0.5, rng);
    }
}

/// Checks a parameterised module with random weights against a random readout.
fn check_module<F>(store: &mut ParamStore<f64>, input: Tensor<f64>, rng: &mut ChaCha8Rng, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    randomise(store, rng);
    let out_shape = {
        let mut g = Graph::inference(store);
        let x = g.constant(input.clone());
        let y = f(&mut g, x)?;
        g.shape(y)
    };
    let readout = Tensor::uniform(out_shape, -1.0, 1.0, rng);
    grad_check(
        store,
        |g| {
            let x = g.constant(input.clone());
            let y = f(g, x)?;
            g.dot(y, &readout)
        },
        &GradCheckOptions::default(),
    )
}

/// Every operation, the clique block, the feature net, each up-sampler and
/// the full tiny model under its pyramid loss, all in 64-bit precision.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(SuiteEntry {
            name: name.to_string(),
            report,
        })
    };

    push(
        "conv2d",
        check_op(&[shape(2, 3, 5, 5), shape(4, 3, 3, 3), shape(4, 1, 1, 1)], &mut rng, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        })?,
    );
    push(
        "conv2d_narrow",
        check_op(&[shape(2, 6, 4, 4), shape(2, 6, 3, 3)], &mut rng, |g, v| g.conv2d(v[0], v[1], None, 1, 1))?,
    );
    push(
        "conv2d_stride2",
        check_op(&[shape(1, 2, 5, 6), shape(3, 2, 3, 3)], &mut rng, |g, v| g.conv2d(v[0], v[1], None, 2, 1))?,
    );
    push(
        "conv_transpose2d",
        check_op(&[shape(1, 3, 3, 3), shape(3, 2, 4, 4), shape(2, 1, 1, 1)], &mut rng, |g, v| {
            g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
        })?,
    );
    push(
        "prelu",
        check_op(&[shape(2, 3, 3, 3), shape(3, 1, 1, 1)], &mut rng, |g, v| g.prelu(v[0], v[1]))?,
    );
    push(
        "concat",
        check_op(&[shape(2, 1, 3, 3), shape(2, 2, 3, 3)], &mut rng, |g, v| g.concat(v))?,
    );
    push(
        "add",
        check_op(&[shape(1, 2, 4, 4), shape(1, 2, 4, 4)], &mut rng, |g, v| g.add(v[0], v[1]))?,
    );
    push(
        "idwt2",
        check_op(&[shape(1, 2, 2, 3); 4], &mut rng, |g, v| g.idwt2(v[0], v[1], v[2], v[3]))?,
    );
    push(
        "pixel_shuffle",
        check_op(&[shape(1, 8, 2, 3)], &mut rng, |g, v| g.pixel_shuffle(v[0], 2))?,
    );
    let target = Tensor::uniform(shape(1, 2, 3, 3), -1.0, 1.0, &mut rng);
    push(
        "mae_loss",
        check_op(&[shape(1, 2, 3, 3)], &mut rng, move |g, v| g.mae_loss(v[0], &target))?,
    );

    let mut store = ParamStore::new();
    let block = CliqueBlock::new(&mut store, "block", 2, 2, true, &mut rng)?;
    let x = Tensor::uniform(shape(1, 4, 4, 4), -1.0, 1.0, &mut rng);
    push("clique_block", check_module(&mut store, x, &mut rng, |g, x| block.forward(g, x))?);

    let mut store = ParamStore::new();
    let fen = Fen::new(&mut store, "fen", 2, 2, 2, FenKind::Clique, &mut rng)?;
    let x = Tensor::uniform(shape(1, 3, 4, 4), -1.0, 1.0, &mut rng);
    push("fen", check_module(&mut store, x, &mut rng, |g, x| fen.forward(g, x))?);

    for kind in [UpKind::Clique, UpKind::CliqueNoJoint, UpKind::Deconv, UpKind::SubPixel] {
        let mut store = ParamStore::new();
        let irn = Irn::new(&mut store, "irn", kind, 8, 4, BandCounts::new(1, 1, 1, 1), &mut rng)?;
        let x = Tensor::uniform(shape(1, 8, 4, 4), -1.0, 1.0, &mut rng);
        let report = check_module(&mut store, x, &mut rng, |g, x| Ok(irn.forward(g, x)?.1))?;
        push(&format!("irn_{}", kind.key()), report);
    }

    push("tiny_model", tiny_model_check(&mut rng)?);
    Ok(out)
}

/// The tiny model end to end under its own training loss.
fn tiny_model_check(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(ModelConfig::tiny(), rng.gen())?;
    let mut store = std::mem::take(&mut model.store);
    randomise(&mut store, rng);
    let x = Tensor::uniform(shape(1, 3, 4, 4), -1.0, 1.0, rng);
    let target = Tensor::uniform(shape(1, 3, 8, 8), -1.0, 1.0, rng);
    grad_check(
        &mut store,
        |g| {
            let xv = g.constant(x.clone());
            let out = model.forward_pyramid(g, xv)?;
            pyramid_loss(g, &out.predictions, std::slice::from_ref(&target))
        },
        &GradCheckOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_suite_passes() {
        let suite = gradcheck_suite(0).unwrap();
        assert_eq!(suite.len(), 17);
        for e in &suite {
            assert!(e.passes(), "{}: {:?}", e.name, e.report.worst());
        }
    }
}
