//! Model spec files: a simple `key = value` text format naming the
//! transform, cascade geometry, and trained codebook path.
//!
//! ```text
//! name = desk-m2
//! transform = patchify-dct
//! patch = 8
//! channels = 3
//! levels = 3
//! groups = 2
//! codewords = 8192,2048,512
//! codebook = books/desk-m2.mcqb
//! ```
//!
//! `offset` and `scale` override the default 128/128 normalization for all
//! channels. `#` starts a comment. The codebook path resolves relative to
//! the spec file's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcq::{TransformKind, TransformSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpecFile {
    pub name: String,
    pub transform: TransformSpec,
    pub levels: usize,
    pub groups: usize,
    pub codewords: Vec<u32>,
    pub codebook: Option<PathBuf>,
}

impl ModelSpecFile {
    pub fn parse(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading spec file {}", path.display()))?;
        let mut kv = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |key: &str| -> Result<&String> {
            kv.get(key)
                .with_context(|| format!("{}: missing key `{key}`", path.display()))
        };
        let name = get("name")?.clone();
        let kind = match get("transform")?.as_str() {
            "patchify" => TransformKind::Patchify,
            "patchify-dct" => TransformKind::PatchifyDct,
            other => bail!("unknown transform `{other}`"),
        };
        let patch: usize = get("patch")?.parse().context("patch")?;
        let channels: usize = get("channels")?.parse().context("channels")?;
        let levels: usize = get("levels")?.parse().context("levels")?;
        let groups: usize = get("groups")?.parse().context("groups")?;
        let codewords: Vec<u32> = get("codewords")?
            .split(',')
            .map(|s| s.trim().parse::<u32>().context("codewords"))
            .collect::<Result<_>>()?;
        let offset: f64 = kv.get("offset").map_or(Ok(128.0), |s| s.parse())?;
        let scale: f64 = kv.get("scale").map_or(Ok(128.0), |s| s.parse())?;
        let codebook = kv.get("codebook").map(|s| {
            let p = PathBuf::from(s);
            if p.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p
            }
        });
        let spec = Self {
            name,
            transform: TransformSpec {
                kind,
                patch,
                normalization: vec![(offset, scale); channels],
            },
            levels,
            groups,
            codewords,
            codebook,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        let n = self.transform.latent_channels();
        if self.groups == 0 || n % self.groups != 0 {
            bail!(
                "latent channels {n} (patch^2 x channels) not divisible by {} groups",
                self.groups
            );
        }
        if self.levels == 0 || self.codewords.len() != self.levels {
            bail!(
                "codewords list has {} entries for {} levels",
                self.codewords.len(),
                self.levels
            );
        }
        if self.codewords.iter().any(|&k| k == 0) {
            bail!("codewords must be >= 1");
        }
        Ok(())
    }

    /// Latent channels per position.
    pub fn latent_channels(&self) -> usize {
        self.transform.latent_channels()
    }

    /// Channel width of one group's sub-vector.
    pub fn group_dim(&self) -> usize {
        self.latent_channels() / self.groups
    }
}
