//! Benchmark task loading.
//!
//! A benchmark directory holds one sub-directory per task:
//!
//! ```text
//! <bench>/<task_id>/query.txt       natural-language description + signature
//! <bench>/<task_id>/target.json     {"path": ..., "start_line": N, "end_line": M}
//! <bench>/<task_id>/reference.py    ground-truth definition
//! <bench>/<task_id>/tests.json      [["{python}", "-m", "unittest", ...], ...]
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::context::{classify_containment, contained, extract_context, Containment};
use super::invoked::{extract_invoked_apis, ResolutionScope};
use super::python::module_name;
use super::{ApiId, ApiUnit, Corpus, CorpusError, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLocation {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub task_id: String,
    pub query: String,
    pub context_block: String,
    pub target_path: String,
    pub target_span: Span,
    pub reference_solution: String,
    pub test_suite: Vec<Vec<String>>,
    pub oracle_apis: BTreeSet<ApiId>,
    /// APIs defined in or called from the context block.
    #[serde(default)]
    pub context_apis: BTreeSet<ApiId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl GenerationTask {
    /// Oracle units in corpus order.
    pub fn oracle_units<'a>(&self, corpus: &'a Corpus) -> Vec<&'a ApiUnit> {
        corpus.units.iter().filter(|u| self.oracle_apis.contains(&u.id)).collect()
    }

    /// The corpus unit being generated, when the target span is one.
    pub fn target_unit<'a>(&self, corpus: &'a Corpus) -> Option<&'a ApiUnit> {
        corpus.unit_at(&self.target_path, self.target_span)
    }

    pub fn containment(&self, corpus: &Corpus) -> Containment {
        classify_containment(&self.context_block, self.oracle_units(corpus))
    }
}

fn task_err(task: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Task { task: task.to_string(), message: message.into() }
}

/// Loads every task under `dir` (sorted by id) and derives its context block
/// and oracle invoked-API set from `corpus`.
pub fn load_benchmark(dir: &Path, corpus: &Corpus) -> Result<Vec<GenerationTask>, CorpusError> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    ids.into_iter().map(|id| load_task(&dir.join(&id), &id, corpus)).collect()
}

fn load_task(dir: &Path, task_id: &str, corpus: &Corpus) -> Result<GenerationTask, CorpusError> {
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| task_err(task_id, format!("{name}: {e}")));
    let query = read("query.txt")?.trim_end().to_string();
    let target: TargetLocation =
        serde_json::from_str(&read("target.json")?).map_err(|e| task_err(task_id, format!("target.json: {e}")))?;
    let reference_solution = read("reference.py")?;
    let test_suite: Vec<Vec<String>> =
        serde_json::from_str(&read("tests.json")?).map_err(|e| task_err(task_id, format!("tests.json: {e}")))?;
    if test_suite.is_empty() || test_suite.iter().any(|c| c.is_empty()) {
        return Err(task_err(task_id, "tests.json must list at least one non-empty command"));
    }

    let span = Span::new(target.start_line, target.end_line);
    let context_block = extract_context(corpus, &target.path, span)?;
    let file = corpus.file(&target.path).ok_or_else(|| CorpusError::MissingFile(target.path.clone()))?;

    let target_unit = corpus.unit_at(&target.path, span);
    let class = target_unit.and_then(|u| {
        let parent = u.qualified_name.rsplit_once('.').map(|(p, _)| p)?;
        (parent != module_name(&u.path)).then(|| parent.to_string())
    });
    let scope = ResolutionScope::for_file(file).with_class(class);
    let invoked = extract_invoked_apis(&reference_solution, &corpus.units, &scope);
    let mut context_apis = extract_invoked_apis(&context_block, &corpus.units, &scope).ids;
    context_apis.extend(contained(&context_block, &corpus.units).into_iter().map(|u| u.id.clone()));

    let mut diagnostics = Vec::new();
    if invoked.unparsable {
        diagnostics.push("reference solution did not parse; oracle API set is empty".to_string());
    }
    if target_unit.is_none() {
        diagnostics.push("target span does not match an extracted API unit".to_string());
    }
    let mut oracle_apis = invoked.ids;
    if let Some(unit) = target_unit {
        oracle_apis.remove(&unit.id);
    }

    Ok(GenerationTask {
        task_id: task_id.to_string(),
        query,
        context_block,
        target_path: target.path,
        target_span: span,
        reference_solution,
        test_suite,
        oracle_apis,
        context_apis,
        diagnostics,
    })
}
