#![allow(dead_code)]

use std::path::{Path, PathBuf};

use repogen::config::RunConfig;
use repogen::gateway::Mode;
use repogen::pipeline::ConditionName;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn transcript() -> PathBuf {
    fixtures().join("transcripts/mini_repo.jsonl")
}

pub fn golden_prompt() -> PathBuf {
    fixtures().join("golden/t1_ConSimAPI_prompt.txt")
}

/// Replay config over the bundled repository, benchmark and transcript.
pub fn replay_config(run_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mode = Mode::Replay;
    cfg.conditions = ConditionName::ALL.to_vec();
    cfg.paths.corpus_root = fixtures().join("mini_repo");
    cfg.paths.benchmark_dir = fixtures().join("mini_bench");
    cfg.paths.run_dir = run_dir.to_path_buf();
    cfg.paths.cache = Some(transcript());
    cfg
}

/// Concatenated record files of a run, in task order.
pub fn record_bytes(run_dir: &Path) -> Vec<u8> {
    let mut files: Vec<PathBuf> =
        std::fs::read_dir(run_dir.join("records")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().flat_map(|f| std::fs::read(f).unwrap()).collect()
}
