//! Retrieval with an index over API descriptions against one over raw API
//! source code. Both use the same predicted descriptions as queries; the
//! rows where the top hit differs are marked.
//!
//! ```text
//! cargo run --example ablation
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use repogen::corpus::load_benchmark;
use repogen::gateway::ReplayCache;
use repogen::pipeline::{
    describe_repository_apis, extend_api_descriptions, generate_api_descriptions, generate_steps, index_items,
};
use repogen::retrieval::{embed, retrieve_apis};
use repogen::{Corpus, Gateway, HashProjection, RunConfig, SourceMode, Vector, VectorIndex};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let cfg = RunConfig::default();
    let corpus = Corpus::load(&fixtures.join("mini_repo"), &cfg.paths.include, &cfg.paths.exclude)?;
    let tasks = load_benchmark(&fixtures.join("mini_bench"), &corpus)?;
    let gateway = Gateway::replay(Arc::new(ReplayCache::open(&fixtures.join("transcripts/mini_repo.jsonl"))?));
    let settings = cfg.pipeline_settings()?;
    let provider = HashProjection::new(cfg.embedding.dim, cfg.embedding.seed);

    let text_index = describe_repository_apis(&corpus, &gateway, &provider, &settings)?.index;
    let raw_index =
        VectorIndex::build(&index_items(&corpus, &[], SourceMode::RawCode), &provider, SourceMode::RawCode)?;
    let name = |id: &repogen::ApiId| corpus.unit(id).map_or_else(|| id.to_string(), |u| u.qualified_name.clone());

    let mut changed = 0;
    for task in &tasks {
        let steps = generate_steps(&task.query, &settings.steps_examples, &gateway, &settings).value;
        let predicted = generate_api_descriptions(&steps, &settings.api_desc_examples, &gateway, &settings).value;
        let descs = extend_api_descriptions(&predicted, &gateway, &settings).value;
        let vectors: Vec<Vector> = descs.iter().map(|d| embed(&d.text, &provider)).collect::<Result<_, _>>()?;
        let exclude = task.target_unit(&corpus).map(|u| u.id.clone()).into_iter().collect();
        let queries = || descs.iter().map(|d| d.description_id.as_str()).zip(&vectors);
        let text = retrieve_apis(queries(), &text_index, &exclude)?;
        let raw = retrieve_apis(queries(), &raw_index, &exclude)?;
        println!("{}:", task.task_id);
        for ((t, r), d) in text.hits.iter().zip(&raw.hits).zip(&descs) {
            let mark = if t.api_id != r.api_id { "*" } else { " " };
            changed += usize::from(t.api_id != r.api_id);
            println!("  {mark} {:<76} {:<38} {}", d.text, name(&t.api_id), name(&r.api_id));
        }
    }
    println!("{changed} description(s) retrieve a different API from raw code");
    Ok(())
}
