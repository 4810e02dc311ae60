//! Splices candidate implementations into a throwaway copy of the
//! repository and runs the task's tests: the reference, a stub with an
//! empty body and a prose completion with no code. Needs `python3`.
//!
//! ```text
//! cargo run --example evaluate_candidates
//! ```

use std::path::PathBuf;

use repogen::corpus::load_benchmark;
use repogen::eval::{execute_candidate, SandboxConfig, VerdictStatus};
use repogen::gateway::extract_code;
use repogen::{Corpus, RunConfig};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let root = fixtures.join("mini_repo");
    let cfg = RunConfig::default();
    let corpus = Corpus::load(&root, &cfg.paths.include, &cfg.paths.exclude)?;
    let tasks = load_benchmark(&fixtures.join("mini_bench"), &corpus)?;
    let sandbox = SandboxConfig::default();

    for task in &tasks {
        let signature = task.reference_solution.lines().next().unwrap_or_default();
        let stub = format!("{signature}\n    pass\n");
        let completions = [
            ("reference", format!("```python\n{}```", task.reference_solution)),
            ("stub", format!("```python\n{stub}```")),
            ("prose", "Call the helper and return its result.".to_string()),
        ];
        for (label, completion) in completions {
            let verdict = match extract_code(&completion) {
                Ok(candidate) => execute_candidate(&candidate, task, &root, &sandbox)?,
                Err(_) => {
                    println!("{:<4} {label:<10} no code in completion", task.task_id);
                    continue;
                }
            };
            let passed = verdict.tests.iter().filter(|t| t.status == VerdictStatus::Pass).count();
            println!(
                "{:<4} {label:<10} {:?} ({passed}/{} tests, {:.2}s)",
                task.task_id,
                verdict.status,
                verdict.tests.len(),
                verdict.wall_time
            );
        }
    }
    Ok(())
}
