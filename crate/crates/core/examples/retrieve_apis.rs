//! Describes every repository API, embeds the descriptions and retrieves
//! the closest API for each predicted description of a task.
//!
//! ```text
//! cargo run --example retrieve_apis [TASK_ID]
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use repogen::corpus::load_benchmark;
use repogen::gateway::ReplayCache;
use repogen::pipeline::{describe_repository_apis, extend_api_descriptions, generate_api_descriptions, generate_steps};
use repogen::retrieval::{embed, retrieve_apis};
use repogen::{Corpus, Gateway, HashProjection, RunConfig, Vector};

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
    let provider = HashProjection::new(cfg.embedding.dim, cfg.embedding.seed);

    let repo = describe_repository_apis(&corpus, &gateway, &provider, &settings)?;
    println!("API index: {} entries from {}", repo.index.len(), repo.index.provider_id());

    let steps = generate_steps(&task.query, &settings.steps_examples, &gateway, &settings).value;
    let predicted = generate_api_descriptions(&steps, &settings.api_desc_examples, &gateway, &settings).value;
    let extended = extend_api_descriptions(&predicted, &gateway, &settings).value;
    let vectors: Vec<Vector> = extended.iter().map(|d| embed(&d.text, &provider)).collect::<Result<_, _>>()?;

    // The unit being generated must not be retrieved.
    let exclude: BTreeSet<_> = task.target_unit(&corpus).map(|u| u.id.clone()).into_iter().collect();
    let hits = retrieve_apis(extended.iter().map(|d| d.description_id.as_str()).zip(&vectors), &repo.index, &exclude)?;
    for (hit, desc) in hits.hits.iter().zip(&extended) {
        let name = corpus.unit(&hit.api_id).map_or("?", |u| u.qualified_name.as_str());
        println!("  [{}] {:<70} -> {name} ({:.3})", hit.description_id, desc.text, hit.score);
    }
    let retrieved: BTreeSet<_> = hits.unique_apis().into_iter().collect();
    let found = task.oracle_apis.intersection(&retrieved).count();
    println!("retrieved {} unique APIs; {found} of {} oracle APIs found", retrieved.len(), task.oracle_apis.len());
    Ok(())
}
