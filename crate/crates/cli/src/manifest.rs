use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gebd_core::error::Result;
use serde::Serialize;

/// Record of one successful command: enough to re-run it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: Vec<String>,
        config: serde_json::Value,
        seed: Option<u64>,
        artifacts: &[PathBuf],
        started: Instant,
    ) -> Self {
        Self {
            command: command.to_string(),
            args,
            config,
            seed,
            artifacts: artifacts.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
