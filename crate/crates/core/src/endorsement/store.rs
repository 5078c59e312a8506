//! Content-addressed object repository: each entry lives under the digest
//! of its bytes. Persisted as a directory of files named by hex address.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{digest, Digest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no object at {0}")]
    Missing(Digest),
    #[error("object at {0} does not hash to its address")]
    Corrupt(Digest),
    #[error("store i/o: {0}")]
    Io(String),
    #[error("file name {0:?} is not a hex content address")]
    BadName(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentStore {
    entries: BTreeMap<Digest, Vec<u8>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bytes: impl Into<Vec<u8>>) -> Digest {
        let bytes = bytes.into();
        let addr = digest(&bytes);
        self.entries.entry(addr).or_insert(bytes);
        addr
    }

    /// Recomputes the address on every read.
    pub fn get(&self, addr: &Digest) -> Result<&[u8], StoreError> {
        let bytes = self.entries.get(addr).ok_or(StoreError::Missing(*addr))?;
        if digest(bytes) != *addr {
            return Err(StoreError::Corrupt(*addr));
        }
        Ok(bytes)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Digest> {
        self.entries.keys()
    }

    /// Addresses whose content no longer hashes to them.
    pub fn corrupted(&self) -> Vec<Digest> {
        self.entries.iter().filter(|(a, b)| digest(b) != **a).map(|(a, _)| *a).collect()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(|e| StoreError::Io(e.to_string()))?;
        for (addr, bytes) in &self.entries {
            fs::write(dir.join(addr.to_hex()), bytes).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// Loads every entry as found on disk. Corruption is reported on read,
    /// not at load time.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let mut entries = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| StoreError::Io(e.to_string()))? {
            let entry = entry.map_err(|e| StoreError::Io(e.to_string()))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let addr = Digest::from_hex(&name).map_err(|_| StoreError::BadName(name.clone()))?;
            let bytes = fs::read(entry.path()).map_err(|e| StoreError::Io(e.to_string()))?;
            entries.insert(addr, bytes);
        }
        Ok(ContentStore { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut s = ContentStore::new();
        let a = s.put(b"hello".to_vec());
        assert_eq!(a, digest(b"hello"));
        assert_eq!(s.get(&a).unwrap(), b"hello");
        assert_eq!(s.get(&digest(b"nope")), Err(StoreError::Missing(digest(b"nope"))));
    }

    #[test]
    fn disk_corruption_detected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ContentStore::new();
        let a = s.put(b"object".to_vec());
        s.save_dir(dir.path()).unwrap();
        let loaded = ContentStore::load_dir(dir.path()).unwrap();
        assert_eq!(loaded, s);
        fs::write(dir.path().join(a.to_hex()), b"objecT").unwrap();
        let loaded = ContentStore::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.get(&a), Err(StoreError::Corrupt(a)));
        assert_eq!(loaded.corrupted(), vec![a]);
    }
}
