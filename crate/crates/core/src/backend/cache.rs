//! Write-through response cache.
//!
//! Entries live one file per key under the cache directory; the key is the
//! SHA-256 of the canonical JSON of `(model, temperature, messages)`. Writes
//! go to a temporary file that is renamed into place, so readers never see
//! a partial entry.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse};

/// The request fields that determine a completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl CanonicalRequest {
    pub fn of(request: &ChatRequest) -> Self {
        CanonicalRequest {
            model: request.model_id.clone(),
            temperature: request.temperature,
            messages: request.messages.clone(),
        }
    }

    pub fn key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("canonical request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CachedUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedText {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CanonicalRequest,
    pub response: CachedText,
    pub usage: CachedUsage,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        entry_path(&self.dir, key)
    }

    pub fn load(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                warn!("unreadable cache entry {}: {e}; treating as miss", path.display());
                return None;
            }
        };
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.request.key() == key => Some(entry),
            Ok(_) => {
                warn!("cache entry {} does not match its key; treating as miss", path.display());
                None
            }
            Err(e) => {
                warn!("corrupt cache entry {}: {e}; treating as miss", path.display());
                None
            }
        }
    }

    pub fn store(&self, key: &str, entry: &CacheEntry) -> Result<(), BackendError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer_pretty(&mut tmp, entry).map_err(std::io::Error::from)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.entry_path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let canonical = CanonicalRequest::of(request);
        let key = canonical.key();
        if let Some(entry) = self.load(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(ChatResponse {
                content: entry.response.content,
                prompt_tokens: entry.usage.prompt_tokens,
                completion_tokens: entry.usage.completion_tokens,
                from_cache: true,
                latency_ms: 0,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        let entry = CacheEntry {
            request: canonical,
            response: CachedText {
                content: response.content.clone(),
            },
            usage: CachedUsage {
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
            },
            timestamp: now_secs(),
        };
        self.store(&key, &entry)?;
        Ok(response)
    }
}

/// Summary of a cache directory's contents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheDirSummary {
    pub entries: usize,
    pub corrupt: usize,
    pub bytes: u64,
}

impl CacheDirSummary {
    pub fn scan(dir: &Path) -> std::io::Result<Self> {
        let mut s = CacheDirSummary::default();
        if !dir.exists() {
            return Ok(s);
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            s.bytes += std::fs::metadata(&path)?.len();
            let ok = std::fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<CacheEntry>(&t).ok())
                .is_some();
            if ok {
                s.entries += 1;
            } else {
                s.corrupt += 1;
            }
        }
        Ok(s)
    }

    /// Removes every entry file; returns how many were removed.
    pub fn clear(dir: &Path) -> std::io::Result<usize> {
        let mut removed = 0;
        if !dir.exists() {
            return Ok(0);
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                std::fs::remove_file(&path)?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
