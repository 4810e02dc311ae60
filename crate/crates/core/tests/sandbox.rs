use std::path::PathBuf;
use std::time::Duration;

use repogen::corpus::{load_benchmark, tree_hash, Corpus, DEFAULT_EXCLUDE, DEFAULT_INCLUDE};
use repogen::eval::{execute_candidate, SandboxConfig, VerdictStatus};
use repogen::gateway::{CodeCandidate, ExtractionMethod};
use repogen::GenerationTask;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn setup() -> (PathBuf, Vec<GenerationTask>) {
    let root = fixture("mini_repo");
    let inc: Vec<String> = DEFAULT_INCLUDE.iter().map(|s| s.to_string()).collect();
    let exc: Vec<String> = DEFAULT_EXCLUDE.iter().map(|s| s.to_string()).collect();
    let corpus = Corpus::load(&root, &inc, &exc).unwrap();
    let tasks = load_benchmark(&fixture("mini_bench"), &corpus).unwrap();
    (root, tasks)
}

fn candidate(source: &str) -> CodeCandidate {
    CodeCandidate { source: source.to_string(), extraction_method: ExtractionMethod::FencedBlock }
}

#[test]
fn references_pass_and_mutations_fail() {
    let (root, tasks) = setup();
    let before = tree_hash(&root).unwrap();
    let cfg = SandboxConfig::default();
    for task in &tasks {
        let v = execute_candidate(&candidate(&task.reference_solution), task, &root, &cfg).unwrap();
        assert_eq!(v.status, VerdictStatus::Pass, "{}: {:?}", task.task_id, v.tests);
    }

    let t1 = &tasks[0];
    let mutated = t1.reference_solution.replace("utils.normalize_key(key)", "key");
    let v = execute_candidate(&candidate(&mutated), t1, &root, &cfg).unwrap();
    assert_eq!(v.status, VerdictStatus::TestFail);

    let crashing = "def load_settings(path):\n    raise RuntimeError('boom')\n";
    let v = execute_candidate(&candidate(crashing), t1, &root, &cfg).unwrap();
    assert_eq!(v.status, VerdictStatus::RuntimeError);

    let broken = "def load_settings(path:\n    return {}\n";
    let v = execute_candidate(&candidate(broken), t1, &root, &cfg).unwrap();
    assert_eq!(v.status, VerdictStatus::CandidateUnparsable);

    assert_eq!(tree_hash(&root).unwrap(), before, "the fixture repository must not change");
}

#[test]
fn infinite_loop_times_out() {
    let (root, tasks) = setup();
    let cfg = SandboxConfig { timeout: Duration::from_secs(2), ..SandboxConfig::default() };
    let looping = "def load_settings(path):\n    while True:\n        pass\n";
    let started = std::time::Instant::now();
    let v = execute_candidate(&candidate(looping), &tasks[0], &root, &cfg).unwrap();
    assert_eq!(v.status, VerdictStatus::Timeout);
    assert_eq!(v.tests.len(), 1, "tests after a timeout are skipped");
    assert!(started.elapsed() < cfg.timeout + cfg.grace + Duration::from_secs(3));
}
