use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::canonical_hash;
use crate::corpus::to_line;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    Embed,
    Nli,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    kind: CacheKind,
    response: Value,
}

/// Append-only score cache, one JSON line per entry.
#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, Value>>,
}

impl ScoreCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        match File::open(&path) {
            Ok(f) => {
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                        text: line.clone(),
                    })?;
                    entries.insert(entry.key, entry.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&path, e)),
        }
        Ok(ScoreCache {
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn embed_key(text: &str) -> String {
        canonical_hash(&serde_json::json!({"kind": "embed", "text": text}))
    }

    pub fn nli_key(premise: &str, hypothesis: &str) -> String {
        canonical_hash(&serde_json::json!({"kind": "nli", "premise": premise, "hypothesis": hypothesis}))
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an entry unless the key is already present.
    pub fn insert(&self, key: String, kind: CacheKind, response: Value) -> Result<()> {
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(&key) {
            return Ok(());
        }
        let line = to_line(&CacheLine {
            key: key.clone(),
            kind,
            response: response.clone(),
        });
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        entries.insert(key, response);
        Ok(())
    }
}
