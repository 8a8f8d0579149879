//! Output files. Every file starts with the full configuration as `# `
//! comment lines and is written through a temp file and a rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// The configuration followed by extra `key = value` lines, all commented.
pub fn header(cfg: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    for line in cfg.to_toml().lines().filter(|l| !l.is_empty()) {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for (k, v) in extra {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out
}

/// Writes `header + body` to `dir/name` and returns the path.
pub fn write_report(dir: &Path, name: &str, header: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, &format!("{header}{body}"))?;
    Ok(path)
}
