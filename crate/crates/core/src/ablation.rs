//! Block-type × up-sampler comparison at toy scale.

use std::fmt::Write as _;

use crate::data::preprocess::Preprocessor;
use crate::error::Result;
use crate::fen::FenKind;
use crate::irn::UpKind;
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig, TrainData};

/// Cells of the two comparisons: blocks varied under the clique up-sampler,
/// then up-samplers varied under clique blocks. The shared CB + CU cell is
/// listed once.
pub const CELLS: [(FenKind, UpKind); 6] = [
    (FenKind::Residual, UpKind::Clique),
    (FenKind::Dense, UpKind::Clique),
    (FenKind::Clique, UpKind::Clique),
    (FenKind::Clique, UpKind::Deconv),
    (FenKind::Clique, UpKind::SubPixel),
    (FenKind::Clique, UpKind::CliqueNoJoint),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub fen: FenKind,
    pub up: UpKind,
    pub params: usize,
    /// Best validation PSNR and SSIM seen during the run (each maximised separately).
    pub best_psnr: f64,
    pub best_ssim: f64,
    pub final_loss: f64,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!("{} + {}", self.fen.label(), self.up.label())
    }
}

/// Trains every cell from the same seed on the same data.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &TrainData,
    pre: &Preprocessor,
    mut progress: impl FnMut(&AblationCell),
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(CELLS.len());
    for (fen, up) in CELLS {
        let cfg = ModelConfig {
            fen_kind: fen,
            up_kind: up,
            ..base.clone()
        };
        let mut model = Model::<T>::new(cfg, train_cfg.seed)?;
        let params = model.num_params();
        let out = train(&mut model, data, pre, train_cfg, None)?;
        let cell = AblationCell {
            fen,
            up,
            params,
            best_psnr: out.best_psnr.unwrap_or(f64::NAN),
            best_ssim: out.best_ssim().unwrap_or(f64::NAN),
            final_loss: out.log.last().map_or(f64::NAN, |r| r.loss),
        };
        progress(&cell);
        cells.push(cell);
    }
    Ok(cells)
}

fn find(cells: &[AblationCell], fen: FenKind, up: UpKind) -> Option<&AblationCell> {
    cells.iter().find(|c| c.fen == fen && c.up == up)
}

fn table(out: &mut String, title: &str, cells: &[&AblationCell]) {
    let labels: Vec<String> = cells.iter().map(|c| c.label()).collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(8);
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "| {:<6} |", "Metric");
    for l in &labels {
        let _ = write!(out, " {l:>width$} |");
    }
    out.push('\n');
    let _ = write!(out, "|--------|");
    for _ in &labels {
        let _ = write!(out, "{}|", "-".repeat(width + 2));
    }
    out.push('\n');
    let _ = write!(out, "| {:<6} |", "PSNR");
    for c in cells {
        let _ = write!(out, " {:>width$.2} |", c.best_psnr);
    }
    out.push('\n');
    let _ = write!(out, "| {:<6} |", "SSIM");
    for c in cells {
        let _ = write!(out, " {:>width$.3} |", c.best_ssim);
    }
    out.push('\n');
}

/// Two Markdown tables: FEN varied with CU fixed, IRN varied with CB fixed.
pub fn format_tables(cells: &[AblationCell]) -> String {
    let pick = |pairs: &[(FenKind, UpKind)]| -> Vec<&AblationCell> {
        pairs.iter().filter_map(|&(f, u)| find(cells, f, u)).collect()
    };
    let mut out = String::new();
    table(
        &mut out,
        "Change FEN and fix IRN",
        &pick(&[
            (FenKind::Residual, UpKind::Clique),
            (FenKind::Dense, UpKind::Clique),
            (FenKind::Clique, UpKind::Clique),
        ]),
    );
    out.push('\n');
    table(
        &mut out,
        "Change IRN and fix FEN",
        &pick(&[
            (FenKind::Clique, UpKind::Deconv),
            (FenKind::Clique, UpKind::SubPixel),
            (FenKind::Clique, UpKind::CliqueNoJoint),
            (FenKind::Clique, UpKind::Clique),
        ]),
    );
    out
}

/// One CSV row per cell.
pub fn cells_csv(cells: &[AblationCell]) -> String {
    let mut out = String::from("fen,up,params,best_psnr_db,best_ssim,final_loss\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.6},{:e}",
            c.fen.label(),
            c.up.label(),
            c.params,
            c.best_psnr,
            c.best_ssim,
            c.final_loss
        );
    }
    out
}
