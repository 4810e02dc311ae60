//! Execution-based evaluation and the study reports.

mod analysis;
mod passk;
mod render;
mod sandbox;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{
    api_count_comparison, check_task_sets, classify_count, intersection_report, pass_at_k_rows, pass_set,
    prompt_length_analysis, recall_metrics, ContainmentSplit, CountClass, CountComparisonReport, CountEntry,
    Intersection, IntersectionReport, LengthReport, LengthSummary, PassAtKRow, PassMatrix, RecallEntry, RecallReport,
    RunOutcomes,
};
pub use passk::{dataset_percentage, pass_at_k_empirical, pass_at_k_estimator, PassAtK, PassAtKMethod};
pub use render::{
    containment_cell, count_row, count_table, intersection_tables, length_table, pass_at_k_table, recall_row,
    recall_table, trimmed, triple, Table,
};
pub use sandbox::{
    check_interpreter, copy_tree, execute_candidate, run_test, splice, ExecutionVerdict, SandboxConfig, TestOutcome,
    VerdictStatus, PYTHON_PLACEHOLDER,
};

use crate::corpus::GenerationTask;
use crate::pipeline::{CandidateOutcome, ConditionName, GenerationRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid Pass@k input: {0}")]
    PassAtK(String),
    #[error(
        "python interpreter `{program}` could not be started; install Python 3 or set `sandbox.python` in the config"
    )]
    InterpreterMissing { program: String },
    #[error("task sets differ between {left} and {right}: {}", difference.join(", "))]
    TaskSetMismatch { left: ConditionName, right: ConditionName, difference: Vec<String> },
    #[error("no outcomes for condition {0}")]
    MissingCondition(ConditionName),
    #[error("record for unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A verdict keyed back to the record it evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub task_id: String,
    pub condition: ConditionName,
    pub sample_index: u32,
    pub verdict: ExecutionVerdict,
}

impl VerdictRecord {
    pub fn key(&self) -> (String, ConditionName, u32) {
        (self.task_id.clone(), self.condition, self.sample_index)
    }
}

/// Runs every record's candidate against its task's tests. Identical
/// candidates for the same task are executed once.
pub fn evaluate_records(
    records: &[GenerationRecord],
    tasks: &[GenerationTask],
    repo_root: &Path,
    cfg: &SandboxConfig,
) -> Result<Vec<VerdictRecord>, EvalError> {
    let by_id: HashMap<&str, &GenerationTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let memo: Mutex<HashMap<(String, String), ExecutionVerdict>> = Mutex::new(HashMap::new());
    records
        .par_iter()
        .map(|r| {
            let task = by_id.get(r.task_id.as_str()).ok_or_else(|| EvalError::UnknownTask(r.task_id.clone()))?;
            let verdict = match &r.candidate {
                CandidateOutcome::Extracted { candidate } => {
                    let key = (r.task_id.clone(), candidate.source.clone());
                    let cached = memo.lock().expect("memo lock").get(&key).cloned();
                    match cached {
                        Some(v) => v,
                        None => {
                            let v = execute_candidate(candidate, task, repo_root, cfg)?;
                            memo.lock().expect("memo lock").insert(key, v.clone());
                            v
                        }
                    }
                }
                CandidateOutcome::Unparsable => ExecutionVerdict::unparsable("no code in completion"),
                CandidateOutcome::LlmFailure { error } => ExecutionVerdict::unparsable(format!("llm failure: {error}")),
            };
            Ok(VerdictRecord {
                task_id: r.task_id.clone(),
                condition: r.condition,
                sample_index: r.sample_index,
                verdict,
            })
        })
        .collect()
}

/// Pass flags per condition and task, ordered by sample index.
pub fn outcomes_from_verdicts(verdicts: &[VerdictRecord]) -> RunOutcomes {
    let mut staged: BTreeMap<ConditionName, BTreeMap<String, BTreeMap<u32, bool>>> = BTreeMap::new();
    for v in verdicts {
        staged
            .entry(v.condition)
            .or_default()
            .entry(v.task_id.clone())
            .or_default()
            .insert(v.sample_index, v.verdict.passed());
    }
    staged
        .into_iter()
        .map(|(c, tasks)| (c, tasks.into_iter().map(|(t, s)| (t, s.into_values().collect())).collect()))
        .collect()
}
