//! Content-addressed blob storage keyed by SHA-256.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;

use crate::error::{CoreError, Result};
use crate::ids::BlobHash;

#[derive(Debug)]
enum Backend {
    Memory(RwLock<HashMap<BlobHash, Vec<u8>>>),
    /// One file per blob, named by its hex digest.
    Disk(PathBuf),
}

#[derive(Debug)]
pub struct BlobStore {
    backend: Backend,
}

impl BlobStore {
    pub fn in_memory() -> Self {
        BlobStore { backend: Backend::Memory(RwLock::new(HashMap::new())) }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { backend: Backend::Disk(dir) })
    }

    pub fn put(&self, bytes: &[u8]) -> Result<BlobHash> {
        let hash = BlobHash::of(bytes);
        match &self.backend {
            Backend::Memory(map) => {
                map.write().entry(hash.clone()).or_insert_with(|| bytes.to_vec());
            }
            Backend::Disk(dir) => {
                let path = dir.join(hash.as_str());
                if !path.exists() {
                    // Write to a temp name first so a crash never leaves a
                    // truncated blob under its final name.
                    let tmp = dir.join(format!(".{}.tmp", hash.as_str()));
                    let mut f = fs::File::create(&tmp)?;
                    f.write_all(bytes)?;
                    f.sync_data()?;
                    fs::rename(&tmp, &path)?;
                }
            }
        }
        Ok(hash)
    }

    /// Fetches a blob and verifies its content hash.
    pub fn get(&self, hash: &BlobHash) -> Result<Vec<u8>> {
        let bytes = match &self.backend {
            Backend::Memory(map) => map
                .read()
                .get(hash)
                .cloned()
                .ok_or_else(|| CoreError::BlobNotFound(hash.clone()))?,
            Backend::Disk(dir) => match fs::read(dir.join(hash.as_str())) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(CoreError::BlobNotFound(hash.clone()))
                }
                Err(e) => return Err(e.into()),
            },
        };
        let actual = BlobHash::of(&bytes);
        if &actual != hash {
            return Err(CoreError::BlobCorrupt { expected: hash.clone(), actual });
        }
        Ok(bytes)
    }

    pub fn contains(&self, hash: &BlobHash) -> bool {
        match &self.backend {
            Backend::Memory(map) => map.read().contains_key(hash),
            Backend::Disk(dir) => dir.join(hash.as_str()).is_file(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Memory(_) => None,
            Backend::Disk(dir) => Some(dir),
        }
    }

    /// Removes every blob not in `keep`; returns how many were removed.
    pub fn retain(&self, keep: &std::collections::HashSet<BlobHash>) -> Result<usize> {
        match &self.backend {
            Backend::Memory(map) => {
                let mut map = map.write();
                let before = map.len();
                map.retain(|h, _| keep.contains(h));
                Ok(before - map.len())
            }
            Backend::Disk(dir) => {
                let mut removed = 0;
                for entry in fs::read_dir(dir)? {
                    let entry = entry?;
                    let name = entry.file_name();
                    let Some(name) = name.to_str() else { continue };
                    let Ok(hash) = name.parse::<BlobHash>() else { continue };
                    if !keep.contains(&hash) {
                        fs::remove_file(entry.path())?;
                        removed += 1;
                    }
                }
                Ok(removed)
            }
        }
    }
}
