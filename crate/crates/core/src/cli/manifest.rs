use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".gasfm.lock";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the manifest's directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl ArtifactRecord {
    pub fn of(path: &Path, recorded_as: &str) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self { path: recorded_as.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
    }
}

/// Record of one CLI invocation: what went in, what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    /// Content hash of the dataset the command read or produced.
    pub dataset_fingerprint: Option<String>,
    /// Full configuration with defaults filled in.
    pub config: serde_json::Value,
    pub inputs: Vec<ArtifactRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    /// Wall-clock seconds per stage. Informational only.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            dataset_fingerprint: None,
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::data(format!("manifest schema version {} unsupported", m.schema_version)));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    /// Artifacts whose current bytes no longer match the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let p = dir.join(&a.path);
            if !p.is_file() || sha256_file(&p)? != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Exclusive ownership of an output directory for one invocation. The lock file
/// is removed on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{} is locked by another invocation ({})", dir.display(), path.display()),
                )))
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files under `root` referenced by no manifest, ignoring manifests and locks.
pub fn find_orphans(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut owned = BTreeSet::new();
    for f in files.iter().filter(|f| f.file_name().is_some_and(|n| n == MANIFEST_FILE)) {
        let dir = f.parent().unwrap_or(root);
        for a in RunManifest::read(f)?.artifacts {
            owned.insert(dir.join(a.path));
        }
    }
    files.retain(|f| {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
        name != MANIFEST_FILE && name != LOCK_FILE && !owned.contains(f)
    });
    files.sort();
    Ok(files)
}

/// Output directory writer that records every artifact it produces.
pub struct ArtifactDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    _lock: DirLock,
}

impl ArtifactDir {
    pub fn open(dir: PathBuf, manifest: RunManifest) -> Result<Self> {
        let lock = DirLock::acquire(&dir)?;
        Ok(Self { dir, manifest, _lock: lock })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hashes a file already written under the directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let rec = ArtifactRecord::of(&self.path(name), name)?;
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(rec);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = File::create(self.path(name))?;
        f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
        self.record(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<String> {
        let rec = ArtifactRecord::of(path, &path.display().to_string())?;
        let hash = rec.sha256.clone();
        self.manifest.inputs.push(rec);
        Ok(hash)
    }

    pub fn time(&mut self, stage: &str, started: std::time::Instant) {
        self.manifest.timings.insert(stage.to_string(), started.elapsed().as_secs_f64());
    }

    pub fn finish(self) -> Result<PathBuf> {
        self.manifest.write(&self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn orphans_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = ArtifactDir::open(dir.path().to_path_buf(), RunManifest::new("t", 0, serde_json::Value::Null)).unwrap();
        out.write_json("a.json", &1).unwrap();
        out.finish().unwrap();
        assert!(find_orphans(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("stray.txt"), "x").unwrap();
        assert_eq!(find_orphans(dir.path()).unwrap(), vec![dir.path().join("stray.txt")]);
        let m = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(m.verify(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.json"), "2").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.json".to_string()]);
    }
}
