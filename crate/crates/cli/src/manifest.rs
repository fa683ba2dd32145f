//! Run directories and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "origin-audit/run-manifest";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ORIGIN_AUDIT_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    /// SHA-256 of the stored `config.json`.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputRef>,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub trained_epochs: Option<usize>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// An in-progress run: a fresh directory plus the manifest being assembled.
pub struct Run {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Create `<root>/<command>-<hash12>-<n>` for the first unused `n` and
    /// store the canonical config in it.
    pub fn create(root: &Path, command: &str, config_json: &str, seed: u64) -> CliResult<Run> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let hash = sha256_hex(config_json.as_bytes());
        let dir = (1..)
            .map(|n| root.join(format!("{command}-{}-{n}", &hash[..12])))
            .find_map(|d| match std::fs::create_dir(&d) {
                Ok(()) => Some(Ok(d)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => None,
                Err(e) => Some(Err(CliError::io(&d, e))),
            })
            .expect("unbounded search")?;
        let cfg_path = dir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, config_json).map_err(|e| CliError::io(&cfg_path, e))?;
        Ok(Run {
            manifest: RunManifest {
                format: MANIFEST_FORMAT.into(),
                version: 1,
                command: command.into(),
                config_hash: hash,
                seeds: BTreeMap::from([("seed".to_string(), seed)]),
                inputs: BTreeMap::new(),
                artifacts: BTreeMap::new(),
                trained_epochs: None,
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
            },
            dir,
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let sha256 = file_sha256(path)?;
        let path = std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))?;
        self.manifest.inputs.insert(
            name.into(),
            InputRef {
                path,
                sha256,
            },
        );
        Ok(())
    }

    pub fn set_trained_epochs(&mut self, epochs: usize) {
        self.manifest.trained_epochs = Some(epochs);
    }

    /// Write an artifact into the run directory and register it.
    pub fn write(&mut self, name: &str, rel: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let rel = rel.as_ref();
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.artifacts.insert(name.into(), rel.to_path_buf());
        Ok(path)
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.manifest.finished_unix_ms = now_ms();
        let path = self.dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(self.dir)
    }
}

impl RunManifest {
    /// Load a manifest and check it against the run directory: the stored
    /// config must match the hash and every artifact must exist.
    pub fn load(path: &Path) -> CliResult<(RunManifest, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Manifest(format!("{}: not a run manifest", path.display())));
        }
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let cfg = dir.join(CONFIG_FILE);
        if file_sha256(&cfg)? != m.config_hash {
            return Err(CliError::Manifest(format!(
                "{}: stored config does not match the manifest hash",
                cfg.display()
            )));
        }
        for (name, rel) in &m.artifacts {
            if !dir.join(rel).is_file() {
                return Err(CliError::Manifest(format!(
                    "artifact {name} missing at {}",
                    dir.join(rel).display()
                )));
            }
        }
        Ok((m, dir))
    }

    pub fn artifact(&self, dir: &Path, name: &str) -> CliResult<PathBuf> {
        self.artifacts
            .get(name)
            .map(|rel| dir.join(rel))
            .ok_or_else(|| CliError::Manifest(format!("run has no {name} artifact")))
    }
}

/// Output root: explicit flag, else the environment variable, else `runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
