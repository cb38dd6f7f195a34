//! Output hygiene: atomic file writes and versioned CSV emission.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

/// Write via a temp file in the same directory plus rename, so a failing
/// command never leaves a partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// A CSV document carrying a schema tag comment ahead of the header row.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(schema: &str, header: &str) -> Self {
        Self {
            buf: format!("# schema: {schema}\n{header}\n"),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn into_string(self) -> String {
        self.buf
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, self.into_string().as_bytes())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}
