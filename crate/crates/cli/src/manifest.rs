//! Run manifests and output-directory helpers.

use std::fs;
use std::path::{Path, PathBuf};

use ksmf_core::field::io::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
/// The resolved configuration, loadable with `--config` to rerun.
pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityFlags {
    /// Mass outside the inner half box exceeded its limit.
    pub tail_mass: bool,
    /// A particle left the inner half box.
    pub escape: bool,
    pub blow_up: bool,
}

impl ValidityFlags {
    pub fn any(&self) -> bool {
        self.tail_mass || self.escape || self.blow_up
    }

    pub fn status(&self) -> RunStatus {
        if self.any() {
            RunStatus::Invalid
        } else {
            RunStatus::Valid
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub status: RunStatus,
    pub flags: ValidityFlags,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&path, &json).map_err(CliError::io(path))
    }
}

/// Creates `dir` and the given subdirectories.
pub fn prepare_dir(dir: &Path, subdirs: &[&str]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    for s in subdirs {
        let p = dir.join(s);
        fs::create_dir_all(&p).map_err(CliError::io(p))?;
    }
    Ok(())
}

pub fn write_text(path: PathBuf, text: &str) -> Result<(), CliError> {
    write_atomic(&path, text.as_bytes()).map_err(CliError::io(path))
}
