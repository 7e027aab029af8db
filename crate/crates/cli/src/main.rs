use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use srclique::ablation::{cells_csv, format_tables, run_ablation};
use srclique::checks::{gradcheck_suite, GRADCHECK_TOLERANCE};
use srclique::config::{Precision, RunConfig};
use srclique::data::manifest::{channel_means, write_means};
use srclique::data::{load_image, save_image, Image, Manifest, PreprocessMode, Preprocessor, Split};
use srclique::eval::{evaluate, evaluate_pairs, pad_even, Bicubic, ModelUpscaler, Upscaler};
use srclique::metrics::EvalSettings;
use srclique::train::{train, TrainData};
use srclique::wavelet::subband_histogram;
use srclique::{Error, Model, Result, Scalar, Tensor};

#[derive(Parser)]
#[command(name = "srclique", version, about = "Wavelet-domain clique network super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "K=V")]
    overrides: Vec<String>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Preprocessing mode.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=4))]
    mode: Option<u32>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a manifest CSV or a directory of images.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in", value_name = "PATH", required = true)]
        input: PathBuf,
        #[arg(long, value_name = "DIR", required = true)]
        out: PathBuf,
    },
    /// Super-resolve images with a trained checkpoint.
    Sr {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH", required = true)]
        checkpoint: PathBuf,
        #[arg(long = "in", value_name = "PATH", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR", required = true)]
        out: PathBuf,
        #[arg(long)]
        ensemble: bool,
    },
    /// Score a model (or bicubic, without a checkpoint) on HR images.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// HR reference images or directories.
        #[arg(long = "in", value_name = "PATH", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Directory of precomputed outputs, matched to references by file name.
        #[arg(long, value_name = "DIR")]
        sr: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        ensemble: bool,
    },
    /// Per-band histograms of DWT coefficients after preprocessing (mode 3 unless `--mode`).
    Dwt {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in", value_name = "PATH", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR", required = true)]
        out: PathBuf,
    },
    /// Finite-difference gradient suite in 64-bit.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Block type × up-sampler matrix at the configured scale.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in", value_name = "PATH", required = true)]
        input: PathBuf,
        #[arg(long, value_name = "DIR", required = true)]
        out: PathBuf,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(p)) if p.is_file() => RunConfig::from_file(p)?,
        _ => RunConfig::default(),
    };
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = PreprocessMode::from_number(m)?;
    }
    cfg.model_config()?;
    Ok(cfg)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Files as given; directories expanded to their PNG/PPM files in name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(Manifest::from_dir(p, Split::Test)?.entries.into_iter().map(|(p, _)| p));
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", p.display()),
            )));
        }
    }
    if out.is_empty() {
        return Err(usage("no input images"));
    }
    Ok(out)
}

fn load_named(paths: &[PathBuf]) -> Result<Vec<(String, Image)>> {
    paths.iter().map(|p| Ok((file_name(p), load_image(p)?))).collect()
}

fn manifest_for(input: &Path) -> Result<Manifest> {
    if input.is_dir() {
        Manifest::from_dir(input, Split::Train)
    } else {
        Manifest::load(input)
    }
}

fn preprocessor(cfg: &RunConfig, means: Option<[f64; 3]>) -> Result<Preprocessor> {
    let means = match (cfg.mode, means) {
        (_, Some(m)) => m,
        (PreprocessMode::Raw | PreprocessMode::Unit, None) => [0.0; 3],
        _ => return Err(usage("preprocessing mode needs channel means; set `means` or use a trained run's config.txt")),
    };
    Preprocessor::new(cfg.mode, means, cfg.ll_scale)
}

fn load_model<T: Scalar>(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<T>> {
    let mut model = Model::<T>::new(cfg.model_config()?, cfg.train.seed)?;
    model.store.load(checkpoint)?;
    Ok(model)
}

fn cmd_train<T: Scalar>(mut cfg: RunConfig, input: &Path, out: &Path) -> Result<()> {
    let manifest = manifest_for(input)?;
    let mut model = Model::<T>::new(cfg.model_config()?, cfg.train.seed)?;
    let data = TrainData::from_manifest(&manifest, cfg.levels, cfg.train.seed)?;
    let means = cfg.means.unwrap_or(data.means);
    cfg.means = Some(means);
    let pre = preprocessor(&cfg, Some(means))?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    write_means(&means, out.join("means.txt"))?;
    eprintln!("training {} parameters on {} images", model.num_params(), data.train.len());
    let outcome = train(&mut model, &data, &pre, &cfg.train, Some(out))?;
    if let Some(last) = outcome.log.last() {
        println!("epoch {} step {} loss {:.6}", last.epoch, last.step, last.loss);
    }
    if let Some(p) = outcome.best_psnr {
        println!("best validation psnr {p:.4} dB");
    }
    Ok(())
}

fn output_path(out: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    let ext = match input.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => "ppm",
        _ => "png",
    };
    out.join(format!("{stem}.{ext}"))
}

fn cmd_sr<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, inputs: &[PathBuf], out: &Path, ensemble: bool) -> Result<()> {
    let pre = preprocessor(cfg, cfg.means)?;
    let model = load_model::<T>(cfg, checkpoint)?;
    let images = expand_inputs(inputs)?;
    let up = ModelUpscaler::new(&model, &pre, ensemble);
    fs::create_dir_all(out)?;
    for p in &images {
        let sr = up.upscale(&load_image(p)?)?;
        let dest = output_path(out, p);
        save_image(&sr, &dest)?;
        let name = dest.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        println!("{} -> {name} ({}x{})", p.display(), sr.width(), sr.height());
    }
    Ok(())
}

fn emit_report(csv: &str, aggregate: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("eval.csv"), csv)?;
        }
        None => print!("{csv}"),
    }
    println!("{aggregate}");
    Ok(())
}

fn cmd_eval<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    refs: &[(String, Image)],
    ensemble: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut settings = EvalSettings {
        channel: cfg.eval_channel,
        shave: cfg.shave(),
        scale: cfg.scale(),
        method: "bicubic".to_string(),
        ensemble: false,
    };
    let report = match checkpoint {
        Some(ckpt) => {
            let pre = preprocessor(cfg, cfg.means)?;
            let model = load_model::<T>(cfg, ckpt)?;
            let up = ModelUpscaler::new(&model, &pre, ensemble);
            settings.method = up.name();
            settings.ensemble = ensemble;
            evaluate(&up, refs, &settings)?
        }
        None => evaluate(&Bicubic { scale: cfg.scale() }, refs, &settings)?,
    };
    emit_report(&report.to_csv(), &report.aggregate_line(), out)
}

fn cmd_eval_pairs(cfg: &RunConfig, refs: Vec<(String, Image)>, sr_dir: &Path, out: Option<&Path>) -> Result<()> {
    let sr = load_named(&expand_inputs(&[sr_dir.to_path_buf()])?)?;
    let mut pairs = Vec::with_capacity(refs.len());
    for (name, hr) in refs {
        let (_, img) = sr
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| usage(format!("no output named {name} in {}", sr_dir.display())))?;
        pairs.push((name, img.clone(), hr));
    }
    let settings = EvalSettings {
        channel: cfg.eval_channel,
        shave: cfg.shave(),
        scale: cfg.scale(),
        method: format!("files:{}", sr_dir.display()),
        ensemble: false,
    };
    let report = evaluate_pairs(&pairs, &settings)?;
    emit_report(&report.to_csv(), &report.aggregate_line(), out)
}

fn cmd_dwt(cfg: &RunConfig, mode: PreprocessMode, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let images: Vec<Image> = load_named(&expand_inputs(inputs)?)?.into_iter().map(|(_, i)| i).collect();
    let means = match cfg.means {
        Some(m) => m,
        None => channel_means(&images)?,
    };
    let pre = Preprocessor::new(mode, means, cfg.ll_scale)?;
    let tensors = images
        .iter()
        .map(|img| pre.forward(&pad_even(img).to_tensor::<f64>()))
        .collect::<Result<Vec<Tensor<f64>>>>()?;
    let hist = subband_histogram(&tensors, cfg.hist_bins, cfg.hist_range)?;
    fs::create_dir_all(out)?;
    let mut bins = Vec::new();
    hist.write_csv(&mut bins)?;
    fs::write(out.join("histogram.csv"), bins)?;
    let mut summary = Vec::new();
    hist.write_summary_csv(&mut summary)?;
    fs::write(out.join("summary.csv"), &summary)?;
    print!("{}", String::from_utf8_lossy(&summary));
    Ok(())
}

fn cmd_gradcheck(seed: u64, out: Option<&Path>) -> Result<bool> {
    let suite = gradcheck_suite(seed)?;
    let mut csv = String::from("check,tensor,max_rel_err,max_abs_err,pass\n");
    for e in &suite {
        let worst = e.report.worst();
        let (tensor, rel, abs) = worst.map_or(("-", 0.0, 0.0), |t| (t.name.as_str(), t.rel_err, t.max_abs_err));
        println!("{:<20} {:>10.3e}  {}", e.name, rel, if e.passes() { "ok" } else { "FAIL" });
        csv.push_str(&format!("{},{},{:e},{:e},{}\n", e.name, tensor, rel, abs, e.passes()));
    }
    let worst = suite
        .iter()
        .filter_map(|e| e.report.worst().map(|t| (e, t)))
        .max_by(|a, b| a.1.rel_err.total_cmp(&b.1.rel_err));
    if let Some((e, t)) = worst {
        println!("worst: {} / {} rel err {:.3e} (tolerance {:e})", e.name, t.name, t.rel_err, GRADCHECK_TOLERANCE);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gradcheck.csv"), csv)?;
    }
    Ok(suite.iter().all(|e| e.passes()))
}

fn cmd_ablate<T: Scalar>(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let base = cfg.model_config()?;
    let manifest = manifest_for(input)?;
    let data = TrainData::from_manifest(&manifest, cfg.levels, cfg.train.seed)?;
    let pre = preprocessor(cfg, Some(cfg.means.unwrap_or(data.means)))?;
    fs::create_dir_all(out)?;
    let cells = run_ablation::<T>(&base, &cfg.train, &data, &pre, |c| {
        eprintln!("{}: {} params, best psnr {:.4} dB", c.label(), c.params, c.best_psnr);
    })?;
    let table = format_tables(&cells);
    fs::write(out.join("ablation.md"), &table)?;
    fs::write(out.join("ablation.csv"), cells_csv(&cells))?;
    print!("{table}");
    Ok(())
}

macro_rules! with_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Train { common, input, out } => {
            let cfg = load_config(&common, None)?;
            with_precision!(cfg, cmd_train(cfg.clone(), &input, &out))?;
        }
        Cmd::Sr {
            common,
            checkpoint,
            inputs,
            out,
            ensemble,
        } => {
            let cfg = load_config(&common, checkpoint.parent().map(|d| d.join("config.txt")).as_deref())?;
            with_precision!(cfg, cmd_sr(&cfg, &checkpoint, &inputs, &out, ensemble))?;
        }
        Cmd::Eval {
            common,
            checkpoint,
            inputs,
            sr,
            out,
            ensemble,
        } => {
            let fallback = checkpoint.as_ref().and_then(|c| c.parent()).map(|d| d.join("config.txt"));
            let cfg = load_config(&common, fallback.as_deref())?;
            if sr.is_some() && checkpoint.is_some() {
                return Err(usage("--sr and --checkpoint are mutually exclusive"));
            }
            let refs = load_named(&expand_inputs(&inputs)?)?;
            match sr {
                Some(dir) => cmd_eval_pairs(&cfg, refs, &dir, out.as_deref())?,
                None => with_precision!(cfg, cmd_eval(&cfg, checkpoint.as_deref(), &refs, ensemble, out.as_deref()))?,
            }
        }
        Cmd::Dwt { common, inputs, out } => {
            let cfg = load_config(&common, None)?;
            let mode = match common.mode {
                Some(m) => PreprocessMode::from_number(m)?,
                None => PreprocessMode::MeanCentred,
            };
            cmd_dwt(&cfg, mode, &inputs, &out)?;
        }
        Cmd::Gradcheck { common, out } => {
            let cfg = load_config(&common, None)?;
            return cmd_gradcheck(cfg.train.seed, out.as_deref());
        }
        Cmd::Ablate { common, input, out } => {
            let cfg = load_config(&common, None)?;
            with_precision!(cfg, cmd_ablate(&cfg, &input, &out))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
