//! Dataset manifest (`path,split` CSV) and the persisted channel means.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, Split)>,
}

impl Manifest {
    /// Relative paths resolve against `base`. A `path,split` header line and
    /// `#` comments are skipped; a missing split column means `train`.
    pub fn parse(text: &str, base: &Path, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let start = offset;
            offset += line.len();
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line == "path,split") {
                continue;
            }
            let (path, split) = match line.rsplit_once(',') {
                Some((p, s)) => {
                    let split = Split::parse(s.trim()).ok_or_else(|| Error::Parse {
                        path: origin.to_string(),
                        offset: start,
                        message: format!("unknown split `{}`", s.trim()),
                    })?;
                    (p.trim(), split)
                }
                None => (line, Split::Train),
            };
            let p = Path::new(path);
            entries.push((if p.is_absolute() { p.to_path_buf() } else { base.join(p) }, split));
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    /// Every image file in `dir` (PNG or PPM), sorted by name, tagged `split`.
    pub fn from_dir(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "ppm")
                )
            })
            .collect();
        paths.sort();
        Ok(Manifest {
            entries: paths.into_iter().map(|p| (p, split)).collect(),
        })
    }

    pub fn paths(&self, split: Split) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(p, _)| p.as_path())
            .collect()
    }
}

/// Per-channel mean over all pixels, in 0..1 units.
pub fn channel_means(images: &[Image]) -> Result<[f64; 3]> {
    if images.is_empty() {
        return Err(Error::usage("channel means of an empty image set"));
    }
    let mut sum = [0u64; 3];
    let mut count = 0u64;
    for img in images {
        for px in img.pixels().chunks(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        count += (img.width() * img.height()) as u64;
    }
    Ok(sum.map(|s| s as f64 / (255.0 * count as f64)))
}

pub fn format_means(means: &[f64; 3]) -> String {
    means.iter().map(|m| format!("{m:.17}\n")).collect()
}

pub fn parse_means(text: &str, origin: &str) -> Result<[f64; 3]> {
    let mut out = Vec::with_capacity(3);
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            offset: start,
            message: format!("`{t}` is not a number"),
        })?;
        out.push(v);
    }
    out.try_into().map_err(|v: Vec<f64>| Error::Parse {
        path: origin.to_string(),
        offset: text.len(),
        message: format!("expected 3 means, found {}", v.len()),
    })
}

pub fn read_means(path: impl AsRef<Path>) -> Result<[f64; 3]> {
    let path = path.as_ref();
    parse_means(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_means(means: &[f64; 3], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_means(means))?;
    Ok(())
}
