//! `key = value` run configuration with `#` comments. Unknown keys are errors.
//!
//! Per-level keys (`cu_c`, `cu_p`, `n_ll`, `n_hl`, `n_lh`, `n_hh`) take a
//! comma list with one entry per level; a single entry applies to every level.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::preprocess::PreprocessMode;
use crate::error::{Error, Result};
use crate::fen::FenKind;
use crate::irn::{BandCounts, UpKind};
use crate::metrics::ChannelMode;
use crate::model::{LevelConfig, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub levels: usize,
    pub fen_blocks: usize,
    pub fen_layers: usize,
    pub fen_growth: usize,
    pub cu_c: Vec<usize>,
    pub cu_p: Vec<usize>,
    pub n_ll: Vec<usize>,
    pub n_hl: Vec<usize>,
    pub n_lh: Vec<usize>,
    pub n_hh: Vec<usize>,
    pub fen_kind: FenKind,
    pub up_kind: UpKind,
    pub mode: PreprocessMode,
    pub ll_scale: f64,
    pub precision: Precision,
    pub train: TrainConfig,
    /// Explicit channel means; otherwise computed from the training split.
    pub means: Option<[f64; 3]>,
    pub eval_channel: ChannelMode,
    /// Border shave for evaluation; defaults to the magnification.
    pub eval_shave: Option<usize>,
    pub hist_bins: usize,
    pub hist_range: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            levels: 1,
            fen_blocks: 0,
            fen_layers: 0,
            fen_growth: 0,
            cu_c: Vec::new(),
            cu_p: Vec::new(),
            n_ll: Vec::new(),
            n_hl: Vec::new(),
            n_lh: Vec::new(),
            n_hh: Vec::new(),
            fen_kind: FenKind::Clique,
            up_kind: UpKind::Clique,
            mode: PreprocessMode::LlScaled,
            ll_scale: 4.0,
            precision: Precision::F64,
            train: TrainConfig::default(),
            means: None,
            eval_channel: ChannelMode::Y,
            eval_shave: None,
            hist_bins: 64,
            hist_range: (-2.0, 2.0),
        };
        c.apply_preset(&ModelConfig::tiny());
        c
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid value for `{key}`"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean for `{key}`")),
    }
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "preset",
    "levels",
    "fen_blocks",
    "fen_layers",
    "fen_growth",
    "cu_c",
    "cu_p",
    "n_ll",
    "n_hl",
    "n_lh",
    "n_hh",
    "fen_kind",
    "up_kind",
    "mode",
    "ll_scale",
    "precision",
    "batch",
    "patch",
    "base_lr",
    "epochs",
    "max_steps",
    "lr_step_epochs",
    "patches_per_image",
    "augment",
    "seed",
    "deterministic",
    "checkpoint_every",
    "val_every",
    "means",
    "eval_channel",
    "eval_shave",
    "hist_bins",
    "hist_range",
];

impl RunConfig {
    /// Architecture fields from a model configuration.
    pub fn apply_preset(&mut self, m: &ModelConfig) {
        self.levels = m.levels.len();
        self.fen_blocks = m.fen_blocks;
        self.fen_layers = m.fen_layers;
        self.fen_growth = m.fen_growth;
        self.cu_c = m.levels.iter().map(|l| l.c).collect();
        self.cu_p = m.levels.iter().map(|l| l.p).collect();
        self.n_ll = m.levels.iter().map(|l| l.counts.ll).collect();
        self.n_hl = m.levels.iter().map(|l| l.counts.hl).collect();
        self.n_lh = m.levels.iter().map(|l| l.counts.lh).collect();
        self.n_hh = m.levels.iter().map(|l| l.counts.hh).collect();
        self.fen_kind = m.fen_kind;
        self.up_kind = m.up_kind;
        self.mode = m.mode;
        self.ll_scale = m.ll_scale;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "preset" => {
                let m = match v {
                    "tiny" => ModelConfig::tiny(),
                    "desk" => ModelConfig::desk(),
                    "table1_x2" => ModelConfig::table1_x2(),
                    "table1_x4" => ModelConfig::table1_x4(),
                    _ => return Err(format!("unknown preset `{v}` (tiny, desk, table1_x2, table1_x4)")),
                };
                self.apply_preset(&m);
            }
            "levels" => self.levels = parse_num(key, v)?,
            "fen_blocks" => self.fen_blocks = parse_num(key, v)?,
            "fen_layers" => self.fen_layers = parse_num(key, v)?,
            "fen_growth" => self.fen_growth = parse_num(key, v)?,
            "cu_c" => self.cu_c = parse_list(key, v)?,
            "cu_p" => self.cu_p = parse_list(key, v)?,
            "n_ll" => self.n_ll = parse_list(key, v)?,
            "n_hl" => self.n_hl = parse_list(key, v)?,
            "n_lh" => self.n_lh = parse_list(key, v)?,
            "n_hh" => self.n_hh = parse_list(key, v)?,
            "fen_kind" => self.fen_kind = FenKind::parse(v).map_err(|e| e.to_string())?,
            "up_kind" => self.up_kind = UpKind::parse(v).map_err(|e| e.to_string())?,
            "mode" => self.mode = PreprocessMode::parse(v).map_err(|e| e.to_string())?,
            "ll_scale" => self.ll_scale = parse_num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("precision must be f32 or f64, got `{v}`")),
                }
            }
            "batch" => t.batch = parse_num(key, v)?,
            "patch" => t.patch = parse_num(key, v)?,
            "base_lr" => t.base_lr = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "max_steps" => t.max_steps = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "lr_step_epochs" => t.lr_step_epochs = parse_num(key, v)?,
            "patches_per_image" => t.patches_per_image = parse_num(key, v)?,
            "augment" => t.augment = parse_bool(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "deterministic" => t.deterministic = parse_bool(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "val_every" => t.val_every = parse_num(key, v)?,
            "means" => {
                if v == "auto" {
                    self.means = None;
                } else {
                    let parts: Vec<f64> = v.split(',').map(|s| parse_num(key, s.trim())).collect::<Result<_, _>>()?;
                    let arr: [f64; 3] = parts.try_into().map_err(|_| "means takes three numbers".to_string())?;
                    self.means = Some(arr);
                }
            }
            "eval_channel" => {
                self.eval_channel = ChannelMode::parse(v).map_err(|e| e.to_string())?;
                self.train.eval_channel = self.eval_channel;
            }
            "eval_shave" => self.eval_shave = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            "hist_bins" => self.hist_bins = parse_num(key, v)?,
            "hist_range" => {
                let (a, b) = v.split_once(',').ok_or("hist_range takes `lo,hi`")?;
                self.hist_range = (parse_num(key, a.trim())?, parse_num(key, b.trim())?);
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v).map_err(|message| Error::Config { line: i + 1, message })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(&fs::read_to_string(path)?)?;
        Ok(c)
    }

    /// A `KEY=VALUE` command-line override; reported as line 0.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            message: format!("override `{kv}` is not KEY=VALUE"),
        })?;
        self.set(k.trim(), v).map_err(|message| Error::Config { line: 0, message })
    }

    fn per_level(&self, name: &str, v: &[usize]) -> Result<Vec<usize>> {
        match v.len() {
            1 => Ok(vec![v[0]; self.levels]),
            n if n == self.levels => Ok(v.to_vec()),
            n => Err(Error::usage(format!("`{name}` has {n} entries for {} levels", self.levels))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let c = self.per_level("cu_c", &self.cu_c)?;
        let p = self.per_level("cu_p", &self.cu_p)?;
        let ll = self.per_level("n_ll", &self.n_ll)?;
        let hl = self.per_level("n_hl", &self.n_hl)?;
        let lh = self.per_level("n_lh", &self.n_lh)?;
        let hh = self.per_level("n_hh", &self.n_hh)?;
        let levels = (0..self.levels)
            .map(|j| LevelConfig {
                c: c[j],
                p: p[j],
                counts: BandCounts::new(ll[j], hl[j], lh[j], hh[j]),
            })
            .collect();
        let m = ModelConfig {
            fen_blocks: self.fen_blocks,
            fen_layers: self.fen_layers,
            fen_growth: self.fen_growth,
            levels,
            fen_kind: self.fen_kind,
            up_kind: self.up_kind,
            mode: self.mode,
            ll_scale: self.ll_scale,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn scale(&self) -> usize {
        1 << self.levels
    }

    pub fn shave(&self) -> usize {
        self.eval_shave.unwrap_or(self.scale())
    }

    /// Canonical dump of every key, readable back by `apply_text`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("levels", self.levels.to_string());
        kv("fen_blocks", self.fen_blocks.to_string());
        kv("fen_layers", self.fen_layers.to_string());
        kv("fen_growth", self.fen_growth.to_string());
        kv("cu_c", fmt_list(&self.cu_c));
        kv("cu_p", fmt_list(&self.cu_p));
        kv("n_ll", fmt_list(&self.n_ll));
        kv("n_hl", fmt_list(&self.n_hl));
        kv("n_lh", fmt_list(&self.n_lh));
        kv("n_hh", fmt_list(&self.n_hh));
        kv("fen_kind", self.fen_kind.key().to_string());
        kv("up_kind", self.up_kind.key().to_string());
        kv("mode", self.mode.number().to_string());
        kv("ll_scale", format!("{:?}", self.ll_scale));
        kv("precision", match self.precision {
            Precision::F32 => "f32".into(),
            Precision::F64 => "f64".into(),
        });
        kv("batch", t.batch.to_string());
        kv("patch", t.patch.to_string());
        kv("base_lr", format!("{:?}", t.base_lr));
        kv("epochs", t.epochs.to_string());
        kv("max_steps", t.max_steps.map_or("none".into(), |m| m.to_string()));
        kv("lr_step_epochs", t.lr_step_epochs.to_string());
        kv("patches_per_image", t.patches_per_image.to_string());
        kv("augment", t.augment.to_string());
        kv("seed", t.seed.to_string());
        kv("deterministic", t.deterministic.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("val_every", t.val_every.to_string());
        kv("means", self.means.map_or("auto".into(), |m| format!("{:?},{:?},{:?}", m[0], m[1], m[2])));
        kv("eval_channel", self.eval_channel.name().to_string());
        kv("eval_shave", self.eval_shave.map_or("auto".into(), |s| s.to_string()));
        kv("hist_bins", self.hist_bins.to_string());
        kv("hist_range", format!("{:?},{:?}", self.hist_range.0, self.hist_range.1));
        o
    }
}
