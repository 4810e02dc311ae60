//! Run directory layout, manifest and lock.
//!
//! ```text
//! <run_dir>/
//!   .lock                 held by the running command
//!   config.toml           config snapshot
//!   manifest.json         rewritten atomically
//!   index/                corpus tables, descriptions, vector indexes, stage markers
//!   records/<task>.jsonl  generation records, append-only
//!   cache_delta.jsonl     completions recorded by this run
//!   verdicts.jsonl        evaluation verdicts, append-only
//!   reports/              derived; regenerable from records and verdicts
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::Corpus;
use crate::gateway::{template_version, GatewayCounters, StageTag};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Writes `value` as pretty JSON through a temporary sibling and a rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

/// Hash of the scanned corpus: every included file's path and text.
pub fn corpus_hash(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for f in &corpus.files {
        h.update(f.path.as_bytes());
        h.update([0]);
        h.update((f.text.len() as u64).to_le_bytes());
        h.update(f.text.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn template_versions() -> BTreeMap<String, String> {
    StageTag::ALL.iter().map(|s| (s.as_str().to_string(), template_version(*s).to_string())).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub runs: u64,
    pub items: u64,
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub recorded: u64,
}

impl StageCounters {
    pub fn add(&mut self, items: u64, g: GatewayCounters) {
        self.runs += 1;
        self.items += items;
        self.provider_calls += g.provider_calls;
        self.cache_hits += g.cache_hits;
        self.recorded += g.recorded;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub template_versions: BTreeMap<String, String>,
    pub corpus_hash: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Keyed by command (`index`, `generate`, `eval`).
    pub stages: BTreeMap<String, StageCounters>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            template_versions: template_versions(),
            corpus_hash: None,
            started_at: Utc::now(),
            finished_at: None,
            stages: BTreeMap::new(),
        }
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn records_dir(&self) -> PathBuf {
        self.root.join("records")
    }

    pub fn record_file(&self, task_id: &str) -> PathBuf {
        self.records_dir().join(format!("{task_id}.jsonl"))
    }

    pub fn cache_delta(&self) -> PathBuf {
        self.root.join("cache_delta.jsonl")
    }

    pub fn verdicts_path(&self) -> PathBuf {
        self.root.join("verdicts.jsonl")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn lock(&self) -> io::Result<RunLock> {
        fs::create_dir_all(&self.root)?;
        RunLock::acquire(&self.root.join(".lock"))
    }

    pub fn read_manifest(&self) -> io::Result<Option<RunManifest>> {
        match read_json(&self.manifest_path()) {
            Ok(m) => Ok(Some(m)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Loads the manifest, or creates one for `config`, and refreshes the
    /// config snapshot. The manifest is written before any work starts.
    pub fn begin(&self, config: &RunConfig) -> io::Result<RunManifest> {
        let mut manifest = self.read_manifest()?.unwrap_or_else(|| RunManifest::new(config.clone()));
        manifest.config = config.clone();
        manifest.template_versions = template_versions();
        manifest.finished_at = None;
        fs::write(self.config_path(), config.render())?;
        write_json_atomic(&self.manifest_path(), &manifest)?;
        Ok(manifest)
    }

    pub fn finish(&self, manifest: &mut RunManifest) -> io::Result<()> {
        manifest.finished_at = Some(Utc::now());
        write_json_atomic(&self.manifest_path(), manifest)
    }

    /// Record files present, sorted by task id.
    pub fn record_files(&self) -> io::Result<Vec<PathBuf>> {
        let dir = self.records_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        Ok(files)
    }
}

/// Exclusive claim on a run directory, released on drop. A lock left by a
/// process that no longer exists is taken over.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn pid_alive(pid: i32) -> bool {
    // SAFETY: signal 0 performs only the existence and permission check.
    let rc = unsafe { libc::kill(pid, 0) };
    rc == 0 || io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

impl RunLock {
    pub fn acquire(path: &Path) -> io::Result<RunLock> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(RunLock { path: path.to_path_buf() });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<i32>().ok());
                    match holder {
                        Some(pid) if pid_alive(pid) => {
                            return Err(io::Error::new(
                                io::ErrorKind::WouldBlock,
                                format!("run directory is locked by process {pid} ({})", path.display()),
                            ))
                        }
                        _ => {
                            tracing::warn!(lock = %path.display(), "removing stale lock");
                            fs::remove_file(path)?;
                        }
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(io::Error::new(io::ErrorKind::WouldBlock, format!("could not acquire {}", path.display())))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let held = run.lock().unwrap();
        let err = run.lock().unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::WouldBlock);
        drop(held);
        run.lock().unwrap();
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        // Far above any default pid_max.
        fs::write(dir.path().join(".lock"), "2147483600\n").unwrap();
        RunDir::new(dir.path()).lock().unwrap();
    }

    #[test]
    fn manifest_begin_and_finish() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let mut m = run.begin(&RunConfig::default()).unwrap();
        assert!(run.config_path().is_file());
        assert_eq!(run.read_manifest().unwrap().unwrap().finished_at, None);
        m.stages.entry("index".into()).or_default().add(12, GatewayCounters::default());
        run.finish(&mut m).unwrap();
        let back = run.read_manifest().unwrap().unwrap();
        assert!(back.finished_at.is_some());
        assert_eq!(back.stages["index"].items, 12);
        assert_eq!(back.template_versions["generate"], "generate@1");
    }
}
