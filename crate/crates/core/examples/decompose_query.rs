//! Turns a task query into implementation steps, predicted API descriptions
//! and their refinements, answering from the bundled replay transcript.
//!
//! ```text
//! cargo run --example decompose_query [TASK_ID]
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use repogen::corpus::load_benchmark;
use repogen::gateway::ReplayCache;
use repogen::pipeline::{extend_api_descriptions, generate_api_descriptions, generate_steps};
use repogen::{Corpus, Gateway, RunConfig};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let task_id = std::env::args().nth(1).unwrap_or_else(|| "t1".into());
    let cfg = RunConfig::default();
    let corpus = Corpus::load(&fixtures.join("mini_repo"), &cfg.paths.include, &cfg.paths.exclude)?;
    let task = load_benchmark(&fixtures.join("mini_bench"), &corpus)?
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| anyhow::anyhow!("no task {task_id}"))?;

    let gateway = Gateway::replay(Arc::new(ReplayCache::open(&fixtures.join("transcripts/mini_repo.jsonl"))?));
    let settings = cfg.pipeline_settings()?;

    let steps = generate_steps(&task.query, &settings.steps_examples, &gateway, &settings);
    println!("steps{}:", if steps.degraded { " (degraded)" } else { "" });
    for s in &steps.value {
        println!("  {}. {}", s.index, s.text);
    }
    let predicted = generate_api_descriptions(&steps.value, &settings.api_desc_examples, &gateway, &settings);
    println!("predicted API descriptions:");
    for d in &predicted.value {
        println!("  [{}] {}", d.description_id, d.text);
    }
    let extended = extend_api_descriptions(&predicted.value, &gateway, &settings);
    println!("after extension ({} total):", extended.value.len());
    for d in extended.value.iter().skip(predicted.value.len()) {
        println!("  [{}] {}", d.description_id, d.text);
    }
    Ok(())
}
