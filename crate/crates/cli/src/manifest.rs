//! Per-stage manifests: the stage, the seed, a digest of the configuration,
//! and SHA-256 digests of every input and output file. Paths are relative to
//! the output directory (inputs outside it are recorded as given), so
//! manifests of runs in different directories compare equal.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::io::{self, io_err};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<Entry>,
    pub outputs: Vec<Entry>,
}

pub const FILE_NAME: &str = "manifest.toml";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_bytes(&bytes))
}

fn relative(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

pub fn entries(out: &Path, files: &[PathBuf]) -> Result<Vec<Entry>, CliError> {
    let mut entries = files
        .iter()
        .map(|p| Ok(Entry { path: relative(out, p), sha256: sha256_file(p)? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    entries.dedup();
    Ok(entries)
}

pub fn path_of(out: &Path, stage: &str) -> PathBuf {
    out.join(stage).join(FILE_NAME)
}

pub fn write(out: &Path, manifest: &Manifest) -> Result<PathBuf, CliError> {
    let path = path_of(out, &manifest.stage);
    io::create_parent(&path)?;
    let text = toml::to_string(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read(out: &Path, stage: &str) -> Result<Option<Manifest>, CliError> {
    let path = path_of(out, stage);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    toml::from_str(&text).map(Some).map_err(|e| io_err(&path, e))
}

/// True when every recorded output still exists with its recorded digest.
pub fn outputs_intact(out: &Path, manifest: &Manifest) -> bool {
    manifest.outputs.iter().all(|e| {
        let p = Path::new(&e.path);
        let full = if p.is_absolute() { p.to_path_buf() } else { out.join(p) };
        sha256_file(&full).is_ok_and(|d| d == e.sha256)
    })
}

/// Exclusive ownership of an output directory, released on drop.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let path = out.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(out.to_path_buf())),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
