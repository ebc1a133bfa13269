//! Persistent response cache: one file per digest, written atomically.

use super::Completion;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

const SCHEMA: &str = "cache/v1";

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    schema: String,
    completion: Completion,
}

/// Key-value directory of `(digest -> completion)` records.
///
/// Entries are written to a temp file and renamed into place, so readers
/// never observe a torn entry and concurrent writers of the same key
/// converge on exactly one file. An undecodable entry counts as a miss.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up a completion. Corrupted entries are reported as misses
    /// with a warning so the caller recomputes and overwrites them.
    pub fn get(&self, key: &str) -> Option<Completion> {
        let path = self.entry_path(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => Some(entry.completion),
            Err(err) => {
                tracing::warn!(key, %err, "cache entry undecodable; treating as miss");
                None
            }
        }
    }

    /// Atomic insert: write to a temp file in the same directory, then rename.
    pub fn put(&self, key: &str, completion: &Completion) -> std::io::Result<()> {
        let entry = CacheEntry {
            schema: SCHEMA.into(),
            completion: completion.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&entry)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.flush()?;
        tmp.persist(self.entry_path(key)).map_err(|e| e.error)?;
        Ok(())
    }

    /// Number of entries on disk (test and diagnostics helper).
    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
