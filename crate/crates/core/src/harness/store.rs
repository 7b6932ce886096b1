use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cache::ResultCache;

/// On-disk cache: one JSON file per key under two-character shard
/// directories. Writes go to a temporary file renamed into place.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    pub fn stats(&self) -> std::io::Result<CacheStats> {
        let mut s = CacheStats::default();
        if !self.root.exists() {
            return Ok(s);
        }
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for e in fs::read_dir(shard.path())? {
                let e = e?;
                if e.path().extension().is_some_and(|x| x == "json") {
                    s.entries += 1;
                    s.bytes += e.metadata()?.len();
                }
            }
        }
        Ok(s)
    }

    pub fn clear(&self) -> std::io::Result<()> {
        if self.root.exists() {
            fs::remove_dir_all(&self.root)?;
        }
        Ok(())
    }

    fn write(&self, key: &str, payload: &str) -> std::io::Result<()> {
        let target = self.path(key);
        let dir = target.parent().expect("sharded path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(payload.as_bytes())?;
        tmp.persist(&target).map_err(|e| e.error)?;
        Ok(())
    }
}

impl ResultCache for DiskCache {
    fn load(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    fn store(&self, key: &str, payload: &str) {
        // A failed write only costs a recomputation later.
        let _ = self.write(key, payload);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::memoize;

    #[test]
    fn stores_loads_and_clears() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::new(dir.path().join("cache"));
        assert_eq!(c.stats().unwrap().entries, 0);
        let v: Vec<f64> = memoize(Some(&c), &"a", || Ok::<_, ()>(vec![0.1, 0.2 + 0.1])).unwrap();
        let again: Vec<f64> = memoize(Some(&c), &"a", || -> Result<Vec<f64>, ()> { panic!("recomputed") }).unwrap();
        assert_eq!(v, again);
        let s = c.stats().unwrap();
        assert_eq!(s.entries, 1);
        assert!(s.bytes > 0);
        c.clear().unwrap();
        assert_eq!(c.stats().unwrap().entries, 0);
    }
}
