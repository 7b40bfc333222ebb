//! Report writing. Files are written to a temporary sibling and renamed, so
//! a failed run never leaves a partial file.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::{CliError, CliResult};

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::input(format!("JSON encoding failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::input(format!("cannot write {}: {e}", path.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes to `path`, or to stdout when `path` is `None` or `-`.
pub fn emit(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => write_atomic(p, contents.as_bytes()),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes()).map_err(|e| CliError::input(format!("stdout: {e}")))
        }
    }
}
