//! Atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::Failure;

/// JSON payload with the resolved configuration echoed alongside.
#[derive(Serialize)]
pub struct Echoed<'a, T: Serialize> {
    pub config: &'a RunConfig,
    pub result: T,
}

/// Write `bytes` to `dir/name` through a temporary file and rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    let io = |e: std::io::Error| Failure::data(format!("writing {}: {e}", dir.join(name).display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| io(e.error))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    s.push('\n');
    write_atomic(dir, name, s.as_bytes())
}
