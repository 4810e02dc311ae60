//! Assembles the prompt of every study condition for one task and prints
//! its block layout and estimated size. Pass `--show NAME` to print a
//! prompt in full.
//!
//! ```text
//! cargo run --example condition_matrix [TASK_ID] [--show ConSimAPI]
//! ```

use std::path::PathBuf;

use repogen::corpus::load_benchmark;
use repogen::pipeline::{assemble_prompt, PromptInputs};
use repogen::retrieval::{embed, retrieve_similar};
use repogen::{Condition, ConditionName, Corpus, HashProjection, RunConfig, SourceMode, VectorIndex};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let args: Vec<String> = std::env::args().skip(1).collect();
    let show: Option<ConditionName> = match args.iter().position(|a| a == "--show") {
        Some(i) => Some(
            args.get(i + 1)
                .ok_or_else(|| anyhow::anyhow!("--show needs a condition"))?
                .parse()
                .map_err(anyhow::Error::msg)?,
        ),
        None => None,
    };
    let task_id = args.first().filter(|a| !a.starts_with("--")).cloned().unwrap_or_else(|| "t1".into());

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
    let similar = retrieve_similar(
        &key,
        &index,
        &windows,
        Some((&task.target_path, task.target_span)),
        cfg.generation.top_k_similar,
    )?;

    println!("{:<10} {:<40} tokens", "condition", "blocks");
    for name in ConditionName::STUDY {
        let condition = Condition::new(name);
        let prompt = assemble_prompt(PromptInputs {
            condition,
            task: &task,
            apis: condition.use_api.then(|| task.oracle_units(&corpus)),
            similar: condition.use_similar.then_some(similar.as_slice()),
            token_limit: cfg.pipeline_settings()?.token_limit,
        })?;
        println!("{:<10} {:<40} {:>6}", name.as_str(), prompt.signature(), prompt.token_estimate);
        if show == Some(name) {
            println!("\n{}\n", prompt.render());
        }
    }
    Ok(())
}
