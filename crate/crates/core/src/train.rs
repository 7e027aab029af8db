//! Patch-based training with Adam, the step learning-rate schedule,
//! periodic validation and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{step_decay, Adam, AdamConfig, Graph};
use crate::data::augment::{augment, Dihedral};
use crate::data::image::{load_image, Image};
use crate::data::manifest::{channel_means, Manifest, Split};
use crate::data::patches::{PyramidImage, SamplePair};
use crate::data::preprocess::Preprocessor;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ModelUpscaler};
use crate::metrics::{ChannelMode, EvalSettings};
use crate::model::{pyramid_loss, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    /// LR patch side.
    pub patch: usize,
    pub base_lr: f64,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Epochs between learning-rate halvings.
    pub lr_step_epochs: usize,
    /// Random patches drawn per training image per epoch.
    pub patches_per_image: usize,
    pub augment: bool,
    pub seed: u64,
    /// Zero the wall-clock column so logs are byte-reproducible.
    pub deterministic: bool,
    /// Epochs between numbered checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Epochs between validation passes; 0 disables validation.
    pub val_every: usize,
    pub eval_channel: ChannelMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 16,
            patch: 32,
            base_lr: 1e-5,
            epochs: 1,
            max_steps: None,
            lr_step_epochs: 200,
            patches_per_image: 1,
            augment: true,
            seed: 0,
            deterministic: true,
            checkpoint_every: 0,
            val_every: 1,
            eval_channel: ChannelMode::Y,
        }
    }
}

/// Training pyramids and full-size validation images.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<PyramidImage>,
    pub val: Vec<(String, Image)>,
    /// Training-split channel means, 0..1 units.
    pub means: [f64; 3],
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

impl TrainData {
    /// Train images are the manifest's `train` entries. Validation uses the
    /// `val` entries, or when there are none the last tenth of the train
    /// entries after a seeded shuffle.
    pub fn from_manifest(manifest: &Manifest, levels: usize, seed: u64) -> Result<Self> {
        let mut train: Vec<&Path> = manifest.paths(Split::Train);
        let mut val: Vec<&Path> = manifest.paths(Split::Val);
        if train.is_empty() {
            return Err(Error::usage("manifest has no training images"));
        }
        if val.is_empty() && train.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            train.shuffle(&mut rng);
            let k = train.len().div_ceil(10);
            val = train.split_off(train.len() - k);
            train.sort();
            val.sort();
        }
        let train_imgs = train.iter().map(load_image).collect::<Result<Vec<_>>>()?;
        let means = channel_means(&train_imgs)?;
        Ok(TrainData {
            train: train_imgs
                .iter()
                .map(|img| PyramidImage::from_hr(img, levels))
                .collect::<Result<_>>()?,
            val: val
                .iter()
                .map(|p| Ok((file_name(p), load_image(p)?)))
                .collect::<Result<_>>()?,
            means,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    /// Mean loss over the epoch's steps.
    pub loss: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValPoint {
    pub epoch: usize,
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub step_losses: Vec<f64>,
    pub validation: Vec<ValPoint>,
    pub best_psnr: Option<f64>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,step,loss,lr,elapsed_s\n");
        for r in &self.log {
            let _ = writeln!(out, "{},{},{:e},{:e},{:.3}", r.epoch, r.step, r.loss, r.lr, r.elapsed_s);
        }
        out
    }

    pub fn best_ssim(&self) -> Option<f64> {
        self.validation.iter().map(|v| v.ssim).reduce(f64::max)
    }
}

/// Stacks per-sample (1, C, H, W) tensors into one batch.
fn stack<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = items.iter().collect();
    Tensor::stack(&refs)
}

/// Draws one preprocessed batch: random image, random patch, random dihedral transform.
pub fn draw_batch<T: Scalar>(
    data: &[&PyramidImage],
    cfg: &TrainConfig,
    pre: &Preprocessor,
    rng: &mut ChaCha8Rng,
) -> Result<SamplePair<T>> {
    use rand::Rng;
    let mut lrs = Vec::with_capacity(cfg.batch);
    let mut his: Vec<Vec<Tensor<T>>> = Vec::new();
    for _ in 0..cfg.batch {
        let img = data[rng.gen_range(0..data.len())];
        let crop = img.random_crop(cfg.patch, rng).expect("filtered to large-enough images");
        let mut sample: SamplePair<T> = crop.to_sample();
        if cfg.augment {
            sample = augment(&sample, Dihedral::random(rng))?;
        }
        lrs.push(pre.input(&sample.lr)?);
        if his.is_empty() {
            his = vec![Vec::with_capacity(cfg.batch); sample.hr_levels.len()];
        }
        for (dst, hr) in his.iter_mut().zip(&sample.hr_levels) {
            dst.push(pre.forward(hr)?);
        }
    }
    Ok(SamplePair {
        lr: stack(&lrs)?,
        hr_levels: his.iter().map(|v| stack(v)).collect::<Result<_>>()?,
    })
}

/// One forward/backward/Adam step. Returns the loss.
pub fn train_step<T: Scalar>(model: &mut Model<T>, adam: &mut Adam<T>, batch: &SamplePair<T>, step: usize) -> Result<f64> {
    let grads = {
        let mut g = Graph::new(&model.store);
        let x = g.constant(batch.lr.clone());
        let out = model.forward_pyramid(&mut g, x)?;
        let loss = pyramid_loss(&mut g, &out.predictions, &batch.hr_levels)?;
        let value = g.scalar(loss).to_f64_lossy();
        if !value.is_finite() {
            let tensor = g.first_non_finite().unwrap_or_else(|| "loss".to_string());
            return Err(Error::NonFinite { tensor, step });
        }
        (g.backward(loss)?, value)
    };
    model.store.zero_grad();
    model.store.accumulate(&grads.0);
    if let Some(name) = model.store.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
            step,
        });
    }
    adam.step(&mut model.store)?;
    if let Some(name) = model.store.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
            step,
        });
    }
    Ok(grads.1)
}

fn validate<T: Scalar>(model: &Model<T>, pre: &Preprocessor, val: &[(String, Image)], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let r = model.config.scale();
    let settings = EvalSettings {
        channel: cfg.eval_channel,
        shave: r,
        scale: r,
        method: "model".to_string(),
        ensemble: false,
    };
    let up = ModelUpscaler::new(model, pre, false);
    Ok(evaluate(&up, val, &settings)?.aggregate())
}

/// Runs the epoch loop. Checkpoints and the log go to `out_dir` when given:
/// `epoch{e}.ckpt` every `checkpoint_every` epochs, `best.ckpt` at the best
/// validation PSNR, `last.ckpt` and `train_log.csv` at the end.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &TrainData,
    pre: &Preprocessor,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.batch == 0 || cfg.patch == 0 || cfg.patches_per_image == 0 {
        return Err(Error::usage("batch, patch and patches_per_image must be positive"));
    }
    if data.train.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    let usable: Vec<&PyramidImage> = data
        .train
        .iter()
        .filter(|p| p.lr.width() >= cfg.patch && p.lr.height() >= cfg.patch)
        .collect();
    if usable.is_empty() {
        return Err(Error::usage(format!("no training image has an LR side of at least {}", cfg.patch)));
    }
    let skipped = data.train.len() - usable.len();
    if skipped > 0 {
        eprintln!("warning: skipping {skipped} training image(s) smaller than the patch");
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let ckpt = |name: String| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.base_lr,
        ..AdamConfig::default()
    });
    let steps_per_epoch = (usable.len() * cfg.patches_per_image).div_ceil(cfg.batch);
    let start = Instant::now();
    let mut outcome = TrainOutcome::default();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = step_decay(epoch, cfg.base_lr, cfg.lr_step_epochs);
        adam.set_lr(lr);
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..steps_per_epoch {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch = draw_batch::<T>(&usable, cfg, pre, &mut rng)?;
            let loss = train_step(model, &mut adam, &batch, step)?;
            outcome.step_losses.push(loss);
            sum += loss;
            count += 1;
            step += 1;
        }
        if count == 0 {
            break 'epochs;
        }
        outcome.log.push(LogRow {
            epoch,
            step,
            loss: sum / count as f64,
            lr,
            elapsed_s: if cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
        });
        let finished = epoch + 1;
        if cfg.checkpoint_every > 0 && finished % cfg.checkpoint_every == 0 {
            if let Some(p) = ckpt(format!("epoch{finished}.ckpt")) {
                model.store.save(p)?;
            }
        }
        let last = finished == cfg.epochs || cfg.max_steps.is_some_and(|m| step >= m);
        if !data.val.is_empty() && cfg.val_every > 0 && (finished % cfg.val_every == 0 || last) {
            let (psnr, ssim) = validate(model, pre, &data.val, cfg)?;
            outcome.validation.push(ValPoint {
                epoch,
                step,
                psnr,
                ssim,
            });
            if outcome.best_psnr.is_none_or(|b| psnr > b) {
                outcome.best_psnr = Some(psnr);
                if let Some(p) = ckpt("best.ckpt".to_string()) {
                    model.store.save(p)?;
                }
            }
        }
        if last {
            break;
        }
    }
    if let Some(dir) = out_dir {
        model.store.save(dir.join("last.ckpt"))?;
        fs::write(dir.join("train_log.csv"), outcome.log_csv())?;
    }
    Ok(outcome)
}
