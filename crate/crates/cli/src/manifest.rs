//! Content hashes, the run manifest and the output-directory lock.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".adequacy.lock";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of everything that determines a stage's outputs: the config
/// document, the effective seed, the software version and each named input.
/// Every field is length-prefixed so distinct inputs cannot collide by
/// concatenation.
pub fn content_hash(config: &[u8], seed: u64, inputs: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    let mut field = |b: &[u8]| {
        h.update((b.len() as u64).to_le_bytes());
        h.update(b);
    };
    field(b"adequacy-manifest");
    field(VERSION.as_bytes());
    field(&seed.to_le_bytes());
    field(config);
    for (name, bytes) in inputs {
        field(name.as_bytes());
        field(bytes);
    }
    hex(&h.finalize())
}

/// Reads `paths` and returns them as named inputs for [`content_hash`].
pub fn read_inputs(paths: &[(&'static str, PathBuf)]) -> CliResult<Vec<(&'static str, Vec<u8>)>> {
    paths
        .iter()
        .map(|(name, p)| {
            if !p.exists() {
                return Err(CliError::Config(format!("{name} file {} does not exist", p.display())));
            }
            std::fs::read(p).map(|b| (*name, b)).map_err(CliError::io(p))
        })
        .collect()
}

pub fn hash_with_inputs(config: &[u8], seed: u64, inputs: &[(&'static str, Vec<u8>)]) -> String {
    let refs: Vec<(&str, &[u8])> = inputs.iter().map(|(n, b)| (*n, b.as_slice())).collect();
    content_hash(config, seed, &refs)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Provenance record written next to the outputs. It is the only artifact
/// carrying wall-clock times, so the others stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: Vec<(String, u64)>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub stages: Vec<StageStatus>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, master_seed: u64, seeds: Vec<(String, u64)>) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            config_hash,
            master_seed,
            seeds,
            started_unix: unix_now(),
            finished_unix: None,
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Runs `f` as a named stage, recording its outcome.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        log::info!("stage {name}");
        let out = f();
        self.stages.push(StageStatus {
            name: name.into(),
            status: if out.is_ok() { "ok".into() } else { "failed".into() },
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn artifact(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        self.artifacts.push(Artifact { file, sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn write(&mut self, dir: &Path) -> CliResult<()> {
        self.finished_unix = Some(unix_now());
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(CliError::io(path))
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
    _file: File,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::Config(format!(
                    "{} is in use by another run (delete {} if no run is active)",
                    dir.display(),
                    path.display()
                ))
            } else {
                CliError::Io { path: path.clone(), source: e }
            }
        })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_do_not_run_together() {
        let a = content_hash(b"ab", 1, &[("x", b"c")]);
        let b = content_hash(b"a", 1, &[("x", b"bc")]);
        assert_ne!(a, b);
        assert_eq!(a, content_hash(b"ab", 1, &[("x", b"c")]));
    }

    #[test]
    fn second_lock_is_refused() {
        let dir = std::env::temp_dir().join(format!("adequacy-lock-{}", std::process::id()));
        let first = DirLock::acquire(&dir).unwrap();
        assert!(matches!(DirLock::acquire(&dir), Err(CliError::Config(_))));
        drop(first);
        DirLock::acquire(&dir).unwrap();
        std::fs::remove_dir_all(&dir).ok();
    }
}
