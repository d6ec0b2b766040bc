//! Content-addressed cache of masked predictions with optional on-disk persistence.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PredictionDistribution;
use crate::error::{Error, Result};

pub type CacheKey = [u8; 32];

/// SHA-256 over (model identity, document tokens, masked feature).
pub fn cache_key(model_identity: &str, tokens: &[String], masked: Option<&str>) -> CacheKey {
    let mut hasher = Sha256::new();
    hasher.update(model_identity.as_bytes());
    hasher.update([0u8]);
    hasher.update((tokens.len() as u64).to_le_bytes());
    for t in tokens {
        hasher.update((t.len() as u64).to_le_bytes());
        hasher.update(t.as_bytes());
    }
    match masked {
        Some(f) => {
            hasher.update([1u8]);
            hasher.update(f.as_bytes());
        }
        None => hasher.update([0u8]),
    }
    hasher.finalize().into()
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    /// IEEE-754 bit patterns so reloads are exact.
    bits: Vec<u64>,
}

#[derive(Debug, Default)]
pub struct PredictionCache {
    entries: RwLock<HashMap<CacheKey, PredictionDistribution>>,
    path: Option<PathBuf>,
    dirty: AtomicBool,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PredictionCache {
    pub fn in_memory() -> Self {
        PredictionCache::default()
    }

    /// Opens (or starts) the cache file `predictions.jsonl` under `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("predictions.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(&path)?;
            for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let context = || format!("{} line {}", path.display(), i + 1);
                let entry: Entry = serde_json::from_str(&line).map_err(|e| Error::parse(context(), e))?;
                let key = decode_hex(&entry.key).ok_or_else(|| Error::parse(context(), "bad key"))?;
                let probs: Vec<f64> = entry.bits.into_iter().map(f64::from_bits).collect();
                let k = probs.len();
                entries.insert(key, PredictionDistribution::new(probs, k)?);
            }
        }
        Ok(PredictionCache {
            entries: RwLock::new(entries),
            path: Some(path),
            ..PredictionCache::default()
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<PredictionDistribution> {
        let hit = self.entries.read().expect("cache lock poisoned").get(key).cloned();
        let counter = if hit.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        hit
    }

    /// Last write wins; values for a key are deterministic so races are harmless.
    pub fn insert(&self, key: CacheKey, value: PredictionDistribution) {
        self.entries.write().expect("cache lock poisoned").insert(key, value);
        self.dirty.store(true, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Writes all entries (sorted by key) to the backing file, if any.
    pub fn persist(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if !self.dirty.load(Ordering::Relaxed) {
            return Ok(());
        }
        let entries = self.entries.read().expect("cache lock poisoned");
        let mut keys: Vec<&CacheKey> = entries.keys().collect();
        keys.sort();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(std::fs::File::create(&tmp)?);
            for key in keys {
                let entry = Entry {
                    key: key.iter().map(|b| format!("{b:02x}")).collect(),
                    bits: entries[key].probs().iter().map(|p| p.to_bits()).collect(),
                };
                serde_json::to_writer(&mut out, &entry)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        self.dirty.store(false, Ordering::Relaxed);
        Ok(())
    }
}

fn decode_hex(s: &str) -> Option<CacheKey> {
    if s.len() != 64 {
        return None;
    }
    let mut key = [0u8; 32];
    for (i, byte) in key.iter_mut().enumerate() {
        *byte = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(key)
}
