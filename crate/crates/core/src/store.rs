//! Content-addressed artifact cache.
//!
//! Each stage result is stored as JSON under `<root>/<stage>/<key>.json`,
//! where the key hashes the stage name, the tool version, the config subset
//! the stage reads and the keys of its upstream stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::hash_json;
use crate::error::Result;

/// Environment variable that overrides the cache location.
pub const CACHE_ENV: &str = "HICON_CACHE";

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

/// Outcome of a cached computation.
#[derive(Debug, Clone)]
pub struct Cached<T> {
    pub value: T,
    pub key: String,
    pub hit: bool,
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `HICON_CACHE` if set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(p) if !p.is_empty() => Self::new(PathBuf::from(p)),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key<P: Serialize>(stage: &str, params: &P, upstream: &[&str]) -> String {
        hash_json(&(stage, env!("CARGO_PKG_VERSION"), params, upstream))
    }

    pub fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        let bytes = fs::read(self.path(stage, key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {stage}/{key}: {e}");
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T) -> Result<()> {
        let path = self.path(stage, key);
        let dir = path.parent().expect("entry has a parent directory");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(value)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Returns the cached value for `key`, or computes and stores it.
    pub fn get_or_compute<T, F>(&self, stage: &str, key: String, compute: F) -> Result<Cached<T>>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        if let Some(value) = self.get(stage, &key) {
            log::info!("{stage}: cache hit {}", &key[..12]);
            return Ok(Cached { value, key, hit: true });
        }
        let value = compute()?;
        self.put(stage, &key, &value)?;
        Ok(Cached { value, key, hit: false })
    }

    pub fn remove(&self, stage: &str, key: &str) -> Result<()> {
        match fs::remove_file(self.path(stage, key)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn computes_once_then_hits() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let key = ArtifactStore::key("demo", &[1.5, 2.0], &[]);
        let mut calls = 0;
        let a = store
            .get_or_compute("demo", key.clone(), || {
                calls += 1;
                Ok(vec![0.1f64, 1.0 / 3.0])
            })
            .unwrap();
        assert!(!a.hit);
        let b: Cached<Vec<f64>> = store
            .get_or_compute("demo", key.clone(), || panic!("should hit"))
            .unwrap();
        assert!(b.hit);
        assert_eq!(a.value, b.value);
        assert_eq!(calls, 1);
        store.remove("demo", &key).unwrap();
        assert!(store.get::<Vec<f64>>("demo", &key).is_none());
    }

    #[test]
    fn keys_depend_on_params_and_upstream() {
        let k1 = ArtifactStore::key("s", &1, &["a"]);
        assert_ne!(k1, ArtifactStore::key("s", &2, &["a"]));
        assert_ne!(k1, ArtifactStore::key("s", &1, &["b"]));
        assert_ne!(k1, ArtifactStore::key("t", &1, &["a"]));
        assert_eq!(k1, ArtifactStore::key("s", &1, &["a"]));
    }
}
