//! Artifact writing and the run manifest.

use crate::error::{CliError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Collects the files a command writes into its output directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let contents = contents.as_ref();
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Write { path, source })?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact { file: name.to_string(), bytes: contents.len(), sha256: hex::encode(Sha256::digest(contents)) });
        Ok(())
    }

    /// Renders into a buffer with `f` and writes the result.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> smalldomain::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes `manifest.json` recording the config, seed and checksums.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C, seed: Option<u64>) -> Result<Vec<Artifact>> {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            seed: Option<u64>,
            config: &'a C,
            artifacts: &'a [Artifact],
        }
        let m = Manifest { tool: "smalldomain", version: env!("CARGO_PKG_VERSION"), command, seed, config, artifacts: &self.artifacts };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|source| CliError::Write { path, source })?;
        Ok(std::mem::take(&mut self.artifacts))
    }
}
