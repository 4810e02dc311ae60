//! Chunks the repository into overlapping windows and retrieves the ones
//! most similar to a task's reference solution, skipping any window that
//! overlaps the target function.
//!
//! ```text
//! cargo run --example similar_code [TASK_ID]
//! ```

use std::path::PathBuf;

use repogen::corpus::load_benchmark;
use repogen::retrieval::{embed, retrieve_similar};
use repogen::{Corpus, HashProjection, RunConfig, SourceMode, VectorIndex};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let task_id = std::env::args().nth(1).unwrap_or_else(|| "t2".into());
    let cfg = RunConfig::default();
    let corpus = Corpus::load(&fixtures.join("mini_repo"), &cfg.paths.include, &cfg.paths.exclude)?;
    let task = load_benchmark(&fixtures.join("mini_bench"), &corpus)?
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| anyhow::anyhow!("no task {task_id}"))?;
    let provider = HashProjection::new(cfg.embedding.dim, cfg.embedding.seed);

    let windows = corpus.windows(cfg.generation.window_size, cfg.generation.stride)?;
    let items: Vec<(String, String)> = windows.iter().map(|w| (w.id(), w.text.clone())).collect();
    let index = VectorIndex::build(&items, &provider, SourceMode::RawCode)?;

    let key = embed(&task.reference_solution, &provider)?;
    let target = Some((task.target_path.as_str(), task.target_span));
    println!("{}: target {}:{}-{}", task.task_id, task.target_path, task.target_span.start, task.target_span.end);
    for hit in retrieve_similar(&key, &index, &windows, target, cfg.generation.top_k_similar)? {
        println!("  {:.3}  {}", hit.score, hit.window.id());
    }
    Ok(())
}
