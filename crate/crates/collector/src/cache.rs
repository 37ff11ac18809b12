//! Content-addressed response cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use bento_core::seed::digest_hex;

use crate::client::{CompletionBackend, CompletionRequest, CompletionResponse};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
    pub created_unix: u64,
}

/// Files live at `<dir>/<key[0..2]>/<key>.json`. Entries are written once
/// through a temporary file and a rename, so readers never see partial data.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

/// Digest over model, prompt and every decoding parameter.
pub fn cache_key(req: &CompletionRequest) -> String {
    digest_hex(&serde_json::to_vec(req).expect("request serializes"))
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, req: &CompletionRequest) -> Result<Option<CompletionResponse>> {
        let key = cache_key(req);
        let path = self.path(&key);
        match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<CacheEntry>(&bytes) {
                Ok(e) if e.request == *req => Ok(Some(e.response)),
                Ok(_) => {
                    log::warn!("cache entry {} does not match its request; ignoring", path.display());
                    Ok(None)
                }
                Err(err) => {
                    log::warn!("unreadable cache entry {}: {err}", path.display());
                    Ok(None)
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Keeps an existing entry untouched.
    pub fn put(&self, req: &CompletionRequest, response: &CompletionResponse) -> Result<()> {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let key = cache_key(req);
        let path = self.path(&key);
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent)?;
        let entry = CacheEntry {
            key: key.clone(),
            request: req.clone(),
            response: response.clone(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Serves from the cache first and counts what reaches the inner backend.
pub struct CachedBackend<'a> {
    inner: &'a dyn CompletionBackend,
    cache: ResponseCache,
    requests: AtomicUsize,
    hits: AtomicUsize,
}

impl<'a> CachedBackend<'a> {
    pub fn new(inner: &'a dyn CompletionBackend, cache: ResponseCache) -> Self {
        Self { inner, cache, requests: AtomicUsize::new(0), hits: AtomicUsize::new(0) }
    }

    /// Calls forwarded to the inner backend.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }
}

impl CompletionBackend for CachedBackend<'_> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        if let Some(r) = self.cache.get(req)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(r);
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let r = self.inner.complete(req)?;
        self.cache.put(req, &r)?;
        Ok(r)
    }
}
