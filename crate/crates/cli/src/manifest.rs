//! Run bookkeeping: every command records what it read, what it wrote and
//! the hash of its resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: &'a Value,
    config_hash: String,
    version: &'static str,
    created_unix_secs: u64,
    inputs: &'a [FileRecord],
    outputs: &'a [FileRecord],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One command invocation. Reports go through [`Run::write`]; the manifest
/// is written last by [`Run::finish`].
pub struct Run {
    command: &'static str,
    seed: u64,
    config: Value,
    manifest_path: PathBuf,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

impl Run {
    /// Reports go to `dir`, the manifest to `dir/manifest.json`.
    pub fn in_dir(command: &'static str, seed: u64, config: Value, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self::new(command, seed, config, dir.join(MANIFEST_NAME)))
    }

    /// Manifest stored beside a single output file: `data.jsonl.manifest.json`.
    pub fn beside(command: &'static str, seed: u64, config: Value, file: &Path) -> Result<Self> {
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".");
        name.push(MANIFEST_NAME);
        Ok(Self::new(command, seed, config, file.with_file_name(name)))
    }

    fn new(command: &'static str, seed: u64, config: Value, manifest_path: PathBuf) -> Self {
        Self {
            command,
            seed,
            config,
            manifest_path,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        self.manifest_path.parent().unwrap_or(Path::new("."))
    }

    /// Records an input file by content hash; returns its bytes.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let abs = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        self.inputs.push(FileRecord {
            path: abs.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(bytes)
    }

    /// Writes `bytes` to `name` inside the run directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir().join(name);
        self.write_path(&path, bytes)?;
        Ok(path)
    }

    pub fn write_path(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Serializes a CSV writer closure and records the file.
    pub fn write_csv<F>(&mut self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Hash of the resolved configuration plus input contents. Paths are
    /// excluded so moving a run directory keeps the hash.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(serde_json::to_vec(&self.config).expect("json value"));
        for i in &self.inputs {
            h.update(i.sha256.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn finish(self) -> Result<PathBuf> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let m = Manifest {
            command: self.command,
            seed: self.seed,
            config: &self.config,
            config_hash: self.config_hash(),
            version: env!("CARGO_PKG_VERSION"),
            created_unix_secs: created,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&self.manifest_path, bytes)?;
        Ok(self.manifest_path)
    }
}
