//! Scans the bundled mini repository and prints its API table, the code
//! windows and the APIs each benchmark reference calls.
//!
//! ```text
//! cargo run --example index_repository [REPO_ROOT]
//! ```

use std::path::PathBuf;

use repogen::corpus::{load_benchmark, Corpus, DEFAULT_EXCLUDE, DEFAULT_INCLUDE};

fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| fixtures.join("mini_repo"));
    let include: Vec<String> = DEFAULT_INCLUDE.iter().map(|s| s.to_string()).collect();
    let exclude: Vec<String> = DEFAULT_EXCLUDE.iter().map(|s| s.to_string()).collect();
    let corpus = Corpus::load(&root, &include, &exclude)?;

    println!("{} files, {} API units", corpus.files.len(), corpus.units.len());
    for unit in &corpus.units {
        println!(
            "  {:<58} {}:{}-{}",
            format!("{}{}", unit.qualified_name, unit.signature),
            unit.path,
            unit.span.start,
            unit.span.end
        );
    }
    let windows = corpus.windows(20, 10)?;
    println!("{} code windows (20 lines, stride 10)", windows.len());

    let bench = fixtures.join("mini_bench");
    if root == fixtures.join("mini_repo") {
        for task in load_benchmark(&bench, &corpus)? {
            let oracle: Vec<&str> = task.oracle_units(&corpus).iter().map(|u| u.qualified_name.as_str()).collect();
            let target = task.target_unit(&corpus).map_or("?", |u| u.qualified_name.as_str());
            println!("{}: {target} calls {oracle:?} ({:?})", task.task_id, task.containment(&corpus).class);
        }
    }
    Ok(())
}
