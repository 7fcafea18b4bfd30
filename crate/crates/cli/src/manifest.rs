//! Output directories and the run manifest written into each of them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dropevo_core::formulation::oil_table_version;
use dropevo_core::ga::Bookkeeping;
use dropevo_core::rng::GENERATOR_NAME;
use dropevo_gcode::layout::LAYOUT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "dropevo-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub dropevo: String,
    pub oil_table: u32,
    pub layout: u32,
    pub generator: String,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            dropevo: env!("CARGO_PKG_VERSION").to_string(),
            oil_table: oil_table_version(),
            layout: LAYOUT_VERSION,
            generator: GENERATOR_NAME.to_string(),
        }
    }
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    /// Subcommand and its arguments.
    pub command: Vec<String>,
    pub config: Config,
    pub seed: u64,
    pub versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bookkeeping: Option<Bookkeeping>,
    /// Inputs read by the command, with their digests.
    pub inputs: Vec<FileEntry>,
    /// Command-specific summary.
    pub summary: serde_json::Value,
    /// Data files written, sorted by path.
    pub outputs: Vec<FileEntry>,
    /// Seconds since the Unix epoch. The only field that differs between reruns.
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_entry(path: &str, bytes: &[u8]) -> FileEntry {
    FileEntry {
        path: path.to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}

/// Collects the files of one command run and writes them to disk.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (a `/`-separated path inside the directory).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), file_entry(rel, bytes));
        Ok(())
    }

    pub fn entries(&self) -> Vec<FileEntry> {
        self.files.values().cloned().collect()
    }

    pub fn finish(self, mut manifest: RunManifest) -> CliResult<RunManifest> {
        manifest.outputs = self.entries();
        manifest.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.root.join(MANIFEST_FILE), text + "\n")?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &Config, seed: u64) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            command,
            config: config.clone(),
            seed,
            versions: Versions::default(),
            bookkeeping: None,
            inputs: Vec::new(),
            summary: serde_json::Value::Null,
            outputs: Vec::new(),
            created_unix: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let m = RunManifest::new(vec!["evolve".into()], &Config::default(), 7);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(Config::from_json(&text, "m").unwrap(), Config::default());
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
