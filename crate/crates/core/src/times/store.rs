//! File-backed series store: one TSB1 file per series name under a root
//! directory. Writes go to a temporary sibling and are renamed into place, so
//! readers observe either the old or the new blob for a name, never a mix.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use super::codec::{decode_series, encode_series, CodecError};
use crate::model::TimeSeries;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid series name `{0}`")]
    InvalidName(String),
    #[error("series `{0}` not found")]
    NotFound(String),
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("stored blob for `{name}` is corrupt: {source}")]
    Corrupt { name: String, source: CodecError },
    #[error(transparent)]
    Encode(CodecError),
}

/// Names are `[A-Za-z0-9_.-]+`, excluding the directory entries `.` and `..`.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct SeriesStore {
    root: PathBuf,
}

impl SeriesStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, name: &str) -> Result<PathBuf, StoreError> {
        if !is_valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        Ok(self.root.join(name))
    }

    pub fn put(&self, name: &str, series: &TimeSeries) -> Result<(), StoreError> {
        let bytes = encode_series(series).map_err(StoreError::Encode)?;
        self.put_raw(name, &bytes)
    }

    /// Stores an already encoded blob. The blob must decode.
    pub fn put_raw(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.path_for(name)?;
        decode_series(bytes).map_err(|source| StoreError::Corrupt {
            name: name.to_string(),
            source,
        })?;
        // '~' is outside the name alphabet, so temp files never show up in list()
        let tmp = self.root.join(format!(
            "{name}~tmp.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let written = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<TimeSeries, StoreError> {
        let bytes = self.get_raw(name)?;
        decode_series(&bytes).map_err(|source| StoreError::Corrupt {
            name: name.to_string(),
            source,
        })
    }

    pub fn get_raw(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path_for(name)?;
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(name.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    /// Sorted names starting with `prefix`.
    pub fn list(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            if let Some(name) = entry.file_name().to_str() {
                if is_valid_name(name) && name.starts_with(prefix) {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}
