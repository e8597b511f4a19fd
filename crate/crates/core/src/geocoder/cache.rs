use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};

use super::{GeocodeError, GeocodeResult};

pub const CACHE_FILE: &str = "geocode-cache.tsv";

/// Append-only store of `sha256(key) \t result-json` lines.
///
/// Lines that fail to parse are skipped on load, so a torn final write only
/// costs that entry.
pub struct GeoCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, GeocodeResult>>,
    writer: Mutex<Option<File>>,
}

fn hash_key(key: &str) -> String {
    hex::encode(Sha256::digest(key.as_bytes()))
}

impl GeoCache {
    pub fn in_memory() -> Self {
        GeoCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens or creates the cache file inside `dir`.
    pub fn open(dir: &Path) -> Result<Self, GeocodeError> {
        let err = |e: std::io::Error| GeocodeError::Cache(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(err)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for line in reader.lines() {
                let line = line.map_err(err)?;
                let Some((hash, json)) = line.split_once('\t') else {
                    continue;
                };
                if let Ok(result) = serde_json::from_str::<GeocodeResult>(json) {
                    entries.insert(hash.to_string(), result);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(err)?;
        Ok(GeoCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<GeocodeResult> {
        self.entries.read().get(&hash_key(key)).cloned()
    }

    pub fn insert(&self, key: &str, result: &GeocodeResult) -> Result<(), GeocodeError> {
        let hash = hash_key(key);
        let json = serde_json::to_string(result).map_err(|e| GeocodeError::Cache(e.to_string()))?;
        let mut writer = self.writer.lock();
        if let Some(file) = writer.as_mut() {
            writeln!(file, "{hash}\t{json}").map_err(|e| GeocodeError::Cache(e.to_string()))?;
        }
        self.entries.write().insert(hash, result.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geocoder::tests::sample;

    #[test]
    fn skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = GeoCache::open(dir.path()).unwrap();
            cache.insert("a", &sample("p")).unwrap();
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(CACHE_FILE))
            .unwrap();
        writeln!(f, "garbage line").unwrap();
        write!(f, "{}\t{{\"lat\": 1", hash_key("b")).unwrap();
        drop(f);
        let cache = GeoCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("a"), Some(sample("p")));
        assert_eq!(cache.get("b"), None);
    }

    #[test]
    fn concurrent_inserts() {
        let dir = tempfile::tempdir().unwrap();
        let cache = std::sync::Arc::new(GeoCache::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let c = cache.clone();
                std::thread::spawn(move || {
                    for j in 0..20 {
                        c.insert(&format!("{i}-{j}"), &sample("p")).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        drop(cache);
        let reopened = GeoCache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 160);
    }
}
