//! Run manifests: everything needed to rerun a command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::jobs::Job;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub output_dir: PathBuf,
    /// Resolved configuration of the command.
    pub job: Job,
}

impl RunManifest {
    pub fn new(config_file: Option<PathBuf>, job: Job) -> Self {
        Self {
            command: job.name().to_string(),
            config_file,
            seeds: job.seeds().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            output_dir: job.out().to_path_buf(),
            job,
        }
    }

    pub fn set_output_dir(&mut self, dir: PathBuf) {
        self.job.set_out(dir.clone());
        self.output_dir = dir;
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.version != env!("CARGO_PKG_VERSION") {
            log::warn!("manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
        }
        Ok(m)
    }

    pub fn write(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating {}", self.output_dir.display()))?;
        let path = self.output_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
