//! Single-file artifact container: a tar stream with fixed metadata so that
//! identical contents always produce identical bytes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{PersError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Archive {
    entries: BTreeMap<String, Vec<u8>>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.entries.insert(name.into(), bytes);
    }

    pub fn insert_json<T: serde::Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.insert(name, bytes);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.entries
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| PersError::Format(format!("archive entry {name:?} missing")))
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_slice(self.get(name)?)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries are written in name order with zeroed timestamps and owners.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut builder = tar::Builder::new(Vec::new());
        for (name, bytes) in &self.entries {
            let mut header = tar::Header::new_ustar();
            header.set_size(bytes.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_uid(0);
            header.set_gid(0);
            header.set_entry_type(tar::EntryType::Regular);
            builder
                .append_data(&mut header, name, bytes.as_slice())
                .expect("in-memory tar write");
        }
        builder.into_inner().expect("in-memory tar finish")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut archive = tar::Archive::new(bytes);
        let mut entries = BTreeMap::new();
        let iter = archive
            .entries()
            .map_err(|e| PersError::Format(format!("archive: {e}")))?;
        for entry in iter {
            let mut entry = entry.map_err(|e| PersError::Format(format!("archive: {e}")))?;
            let name = entry
                .path()
                .map_err(|e| PersError::Format(format!("archive: {e}")))?
                .to_string_lossy()
                .into_owned();
            let mut buf = Vec::new();
            entry
                .read_to_end(&mut buf)
                .map_err(|e| PersError::Format(format!("archive: {e}")))?;
            entries.insert(name, buf);
        }
        Ok(Archive { entries })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PersError::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PersError::MissingArtifact(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| PersError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
