use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{CompletionResult, StageTag};

/// One line of the replay cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub stage_tag: StageTag,
    pub text: String,
    #[serde(default)]
    pub prompt_token_count: u64,
    #[serde(default)]
    pub completion_token_count: u64,
}

impl CacheRecord {
    pub fn new(key: String, stage_tag: StageTag, result: &CompletionResult) -> Self {
        CacheRecord {
            key,
            stage_tag,
            text: result.text.clone(),
            prompt_token_count: result.prompt_token_count,
            completion_token_count: result.completion_token_count,
        }
    }

    pub fn into_result(self) -> CompletionResult {
        CompletionResult {
            text: self.text,
            prompt_token_count: self.prompt_token_count,
            completion_token_count: self.completion_token_count,
            cached: true,
        }
    }
}

/// Append-only transcript of completions. Readers are concurrent; appends
/// are serialized. An optional delta file receives a copy of every new
/// record (the run directory's share of the cache).
#[derive(Debug)]
pub struct ReplayCache {
    path: PathBuf,
    records: RwLock<HashMap<String, CacheRecord>>,
    order: RwLock<Vec<String>>,
    writer: Mutex<Option<File>>,
    delta: Mutex<Option<File>>,
}

impl ReplayCache {
    /// Opens (or lazily creates) the cache at `path`. When a key appears
    /// more than once the first record wins.
    pub fn open(path: &Path) -> io::Result<Self> {
        let loaded: Vec<CacheRecord> = crate::jsonl::read_or_empty(path)?;
        let mut records = HashMap::new();
        let mut order = Vec::new();
        for record in loaded {
            if !records.contains_key(&record.key) {
                order.push(record.key.clone());
                records.insert(record.key.clone(), record);
            }
        }
        Ok(ReplayCache {
            path: path.to_path_buf(),
            records: RwLock::new(records),
            order: RwLock::new(order),
            writer: Mutex::new(None),
            delta: Mutex::new(None),
        })
    }

    pub fn with_delta(self, path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        *self.delta.lock().unwrap() = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(self)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.records.read().unwrap().get(key).cloned()
    }

    /// Records in first-insertion order.
    pub fn records(&self) -> Vec<CacheRecord> {
        let records = self.records.read().unwrap();
        self.order.read().unwrap().iter().filter_map(|k| records.get(k).cloned()).collect()
    }

    pub fn insert(&self, record: CacheRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        {
            let mut writer = self.writer.lock().unwrap();
            if self.records.read().unwrap().contains_key(&record.key) {
                return Ok(());
            }
            if writer.is_none() {
                if let Some(parent) = self.path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                *writer = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
            }
            let file = writer.as_mut().expect("writer opened above");
            file.write_all(&line)?;
            file.flush()?;
            if let Some(delta) = self.delta.lock().unwrap().as_mut() {
                delta.write_all(&line)?;
                delta.flush()?;
            }
            self.order.write().unwrap().push(record.key.clone());
            self.records.write().unwrap().insert(record.key.clone(), record);
        }
        Ok(())
    }
}
