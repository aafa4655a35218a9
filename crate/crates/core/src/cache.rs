//! Content-addressed store for recorded model exchanges.
//!
//! Each entry is a JSON file named `<hex key>.json`, where the key is the
//! SHA-256 of the canonical JSON serialization of the request. VLM entries
//! live at the store root; detector exchanges under `detections/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How external model exchanges are served.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Always call the endpoint; record every exchange.
    Live,
    /// Serve from the store when possible, call and record on a miss.
    #[default]
    Cached,
    /// Serve only from the store; a miss is a hard error.
    Replay,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(RunMode::Live),
            "cached" => Ok(RunMode::Cached),
            "replay" => Ok(RunMode::Replay),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected live, cached or replay)"))),
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::Live => "live",
            RunMode::Cached => "cached",
            RunMode::Replay => "replay",
        })
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
///
/// serde_json emits struct fields in declaration order and maps in key order
/// (no `preserve_order`), so equal values always hash equally.
pub fn canonical_key<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)?;
    let bytes = serde_json::to_vec(&canonical)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry<Q, R> {
    key: String,
    request: Q,
    response: R,
}

pub struct CacheStore {
    root: PathBuf,
    mode: RunMode,
    write_lock: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CacheStore {
    /// Opens the store. Replay mode requires the directory to exist already;
    /// other modes create it.
    pub fn open(root: impl Into<PathBuf>, mode: RunMode) -> Result<Self> {
        let root = root.into();
        if mode == RunMode::Replay {
            if !root.is_dir() {
                return Err(Error::Config(format!("replay store not found: {}", root.display())));
            }
        } else {
            fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        }
        Ok(Self {
            root,
            mode,
            write_lock: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    fn entry_path(&self, namespace: &str, key: &str) -> PathBuf {
        let dir = if namespace.is_empty() {
            self.root.clone()
        } else {
            self.root.join(namespace)
        };
        dir.join(format!("{key}.json"))
    }

    /// Looks up the response recorded for `request`.
    ///
    /// In replay mode a missing entry is [`Error::ReplayMiss`] and an
    /// unreadable or mismatched entry is [`Error::CorruptCache`]; otherwise
    /// both are reported as a miss.
    pub fn get<Q, R>(&self, namespace: &str, request: &Q) -> Result<Option<R>>
    where
        Q: Serialize + DeserializeOwned + PartialEq,
        R: DeserializeOwned,
    {
        let key = canonical_key(request)?;
        let path = self.entry_path(namespace, &key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::SeqCst);
                if self.mode == RunMode::Replay {
                    return Err(Error::ReplayMiss(key));
                }
                return Ok(None);
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let problem = match serde_json::from_slice::<Entry<Q, R>>(&bytes) {
            Ok(entry) if entry.key == key && entry.request == *request => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(Some(entry.response));
            }
            Ok(_) => "stored request does not match its key".to_string(),
            Err(e) => e.to_string(),
        };
        self.misses.fetch_add(1, Ordering::SeqCst);
        if self.mode == RunMode::Replay {
            Err(Error::CorruptCache { key, reason: problem })
        } else {
            log::warn!("ignoring corrupted cache entry {}: {problem}", path.display());
            Ok(None)
        }
    }

    /// Records `response` for `request`. Writes are serialized and atomic
    /// (temp file + rename). The store is read-only in replay mode.
    pub fn put<Q, R>(&self, namespace: &str, request: &Q, response: &R) -> Result<String>
    where
        Q: Serialize,
        R: Serialize,
    {
        if self.mode == RunMode::Replay {
            return Err(Error::Config("replay store is read-only".into()));
        }
        let key = canonical_key(request)?;
        let entry = Entry {
            key: key.clone(),
            request,
            response,
        };
        let mut bytes = serde_json::to_vec_pretty(&entry)?;
        bytes.push(b'\n');
        let path = self.entry_path(namespace, &key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(key)
    }
}
