//! Append-only result store. Each run lands in its own numbered directory
//! holding `config.json`, the artifacts, and `manifest.json`.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUT_DIR_ENV: &str = "RRR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "rrr-runs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub created_unix: u64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory from the flag, else the environment, else the default.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
    }
}

pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn begin(&self, command: &str, config: &[u8]) -> Result<Run> {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let staging = self.root.join(format!(".staging-{}-{nanos}", std::process::id()));
        fs::create_dir(&staging).with_context(|| format!("cannot create {}", staging.display()))?;
        let mut run = Run {
            root: self.root.clone(),
            staging,
            command: command.to_string(),
            config_sha256: sha256_hex(config),
            files: Vec::new(),
            done: false,
        };
        run.write("config.json", config)?;
        Ok(run)
    }
}

/// A run being written. Dropping it without [`Run::finish`] discards the staging directory.
pub struct Run {
    root: PathBuf,
    staging: PathBuf,
    command: String,
    config_sha256: String,
    files: Vec<FileEntry>,
    done: bool,
}

impl Run {
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name.contains('/') || name == "manifest.json" || self.files.iter().any(|f| f.name == name) {
            bail!("invalid or duplicate artifact name {name}");
        }
        fs::write(self.staging.join(name), bytes).with_context(|| format!("cannot write {name}"))?;
        self.files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            artifact: "rrr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_sha256: self.config_sha256.clone(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            files: self.files.clone(),
        }
    }

    /// Seal the run under the next free sequence number and return its directory.
    pub fn finish(mut self) -> Result<PathBuf> {
        fs::write(self.staging.join("manifest.json"), self.manifest().to_bytes())?;
        let mut seq = next_sequence(&self.root)?;
        loop {
            let name = format!("{seq:04}-{}-{}", self.command, &self.config_sha256[..8]);
            let target = self.root.join(name);
            if target.exists() {
                seq += 1;
                continue;
            }
            match fs::rename(&self.staging, &target) {
                Ok(()) => {
                    self.done = true;
                    return Ok(target);
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists || target.exists() => seq += 1,
                Err(e) => return Err(e).context("cannot seal run directory"),
            }
        }
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn next_sequence(root: &Path) -> Result<u32> {
    let mut max = 0;
    for entry in fs::read_dir(root)? {
        let name = entry?.file_name();
        if let Some(n) = name.to_str().and_then(|s| s.split('-').next()).and_then(|s| s.parse::<u32>().ok()) {
            max = max.max(n);
        }
    }
    Ok(max + 1)
}

/// Recompute every hash recorded in a run directory's manifest.
pub fn verify_run(dir: &Path) -> Result<Manifest> {
    let text = fs::read(dir.join("manifest.json")).context("missing manifest.json")?;
    let manifest: Manifest = serde_json::from_slice(&text).context("malformed manifest.json")?;
    let config = fs::read(dir.join("config.json")).context("missing config.json")?;
    if sha256_hex(&config) != manifest.config_sha256 {
        bail!("config.json does not match the manifest hash");
    }
    for f in &manifest.files {
        let bytes = fs::read(dir.join(&f.name)).with_context(|| format!("missing {}", f.name))?;
        if sha256_hex(&bytes) != f.sha256 || bytes.len() as u64 != f.bytes {
            bail!("{} does not match its manifest entry", f.name);
        }
    }
    Ok(manifest)
}

/// Write `bytes` to `path` plus a sidecar `<path>.manifest.json`, refusing to replace anything.
pub fn write_standalone(path: &Path, bytes: &[u8], command: &str, config: &[u8]) -> Result<()> {
    let sidecar = PathBuf::from(format!("{}.manifest.json", path.display()));
    for p in [path, sidecar.as_path()] {
        if p.exists() {
            bail!("{} already exists; refusing to overwrite", p.display());
        }
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output").to_string();
    let manifest = Manifest {
        artifact: "rrr".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_sha256: sha256_hex(config),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        files: vec![FileEntry { name, sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }],
    };
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .and_then(|mut f| std::io::Write::write_all(&mut f, bytes))
        .with_context(|| format!("cannot write {}", path.display()))?;
    fs::write(&sidecar, manifest.to_bytes())?;
    Ok(())
}
