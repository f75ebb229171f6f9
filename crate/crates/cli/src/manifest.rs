//! Run manifests: the fully resolved invocation written beside every output
//! so a run can be inspected or replayed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cspm_core::fsutil::write_atomic;
use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    /// The parsed command with every default filled in.
    pub command: Command,
    /// Library-level configuration derived from the command.
    pub resolved: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| CliError::Serialize(e.to_string()))?;
        write_atomic(path, &json)?;
        Ok(())
    }
}

/// `<dir>/manifest.json` for directory outputs.
pub fn for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// `<file>.manifest.json` for single-file outputs.
pub fn for_file(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
