//! Runs index, generate and eval over the bundled fixtures in replay mode
//! and prints the study tables: Pass@k per condition, pass-set
//! intersections with the containment split, retrieved-vs-oracle API
//! counts, recall and prompt lengths. Needs `python3`.
//!
//! ```text
//! cargo run --example reports [RUN_DIR]
//! ```

use std::path::PathBuf;

use repogen::commands::{cmd_eval, cmd_generate, cmd_index};
use repogen::{ConditionName, Mode, RunConfig};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let scratch = tempfile::tempdir()?;
    let run_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| scratch.path().join("run"));

    let mut cfg = RunConfig::default();
    cfg.mode = Mode::Replay;
    cfg.conditions = ConditionName::ALL.to_vec();
    cfg.paths.corpus_root = fixtures.join("mini_repo");
    cfg.paths.benchmark_dir = fixtures.join("mini_bench");
    cfg.paths.cache = Some(fixtures.join("transcripts/mini_repo.jsonl"));
    cfg.paths.run_dir = run_dir.clone();

    cmd_index(&cfg)?;
    let generated = cmd_generate(&cfg, &[])?;
    let evaluated = cmd_eval(&cfg)?;
    eprintln!(
        "{} records ({} new), {} executed; run directory {}",
        evaluated.records,
        generated.written,
        evaluated.executed,
        run_dir.display()
    );
    print!("{}", evaluated.report.render());
    Ok(())
}
