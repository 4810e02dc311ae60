//! Pass@k tables and the study analyses: pass-set intersections, the
//! containment split, API count comparison, recall ratios and prompt
//! lengths.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::passk::{dataset_percentage, pass_at_k_estimator};
use super::EvalError;
use crate::corpus::{ApiId, Containment, ContainmentClass};
use crate::pipeline::ConditionName;

/// Per-sample pass flags for one condition, keyed by task id, in sample
/// order.
pub type PassMatrix = BTreeMap<String, Vec<bool>>;
pub type RunOutcomes = BTreeMap<ConditionName, PassMatrix>;

/// Tasks with at least one pass among their first `k` samples.
pub fn pass_set(matrix: &PassMatrix, k: usize) -> BTreeSet<String> {
    matrix.iter().filter(|(_, s)| s.iter().take(k).any(|&p| p)).map(|(t, _)| t.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKRow {
    pub condition: ConditionName,
    pub tasks: usize,
    /// `(k, percentage)` from the unbiased estimator.
    pub estimator: Vec<(u32, f64)>,
    /// `(k, percentage)` from any-pass among the first k samples.
    pub empirical: Vec<(u32, f64)>,
}

/// One row per condition. Every task must have at least `max(ks)` samples.
pub fn pass_at_k_rows(outcomes: &RunOutcomes, ks: &[u32]) -> Result<Vec<PassAtKRow>, EvalError> {
    let mut rows = Vec::new();
    for (&condition, matrix) in outcomes {
        let mut estimator = Vec::new();
        let mut empirical = Vec::new();
        for &k in ks {
            let mut est = Vec::with_capacity(matrix.len());
            let mut emp = Vec::with_capacity(matrix.len());
            for (task, samples) in matrix {
                let n = samples.len() as u32;
                if n < k {
                    return Err(EvalError::PassAtK(format!(
                        "{condition}/{task}: Pass@{k} needs {k} samples, found {n}"
                    )));
                }
                let c = samples.iter().filter(|&&p| p).count() as u32;
                est.push(pass_at_k_estimator(n, c, k)?.value);
                emp.push(if samples.iter().take(k as usize).any(|&p| p) { 1.0 } else { 0.0 });
            }
            estimator.push((k, dataset_percentage(&est)));
            empirical.push((k, dataset_percentage(&emp)));
        }
        rows.push(PassAtKRow { condition, tasks: matrix.len(), estimator, empirical });
    }
    Ok(rows)
}

/// Checks that every condition covers the same tasks; the error lists the
/// symmetric difference against the first condition.
pub fn check_task_sets(outcomes: &RunOutcomes, conditions: &[ConditionName]) -> Result<BTreeSet<String>, EvalError> {
    let mut reference: Option<(ConditionName, BTreeSet<String>)> = None;
    for &c in conditions {
        let tasks: BTreeSet<String> = outcomes.get(&c).ok_or(EvalError::MissingCondition(c))?.keys().cloned().collect();
        match &reference {
            None => reference = Some((c, tasks)),
            Some((first, expected)) if *expected != tasks => {
                let diff: Vec<String> = expected.symmetric_difference(&tasks).cloned().collect();
                return Err(EvalError::TaskSetMismatch { left: *first, right: c, difference: diff });
            }
            Some(_) => {}
        }
    }
    Ok(reference.map(|(_, t)| t).unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intersection {
    pub conditions: Vec<ConditionName>,
    pub tasks: BTreeSet<String>,
}

/// Tasks of one containment class after removing those Pure passes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentSplit {
    pub class: ContainmentClass,
    pub total: usize,
    /// Passed by Context.
    pub cpass: BTreeSet<String>,
    /// Passed by both Context and API.
    pub bpass: BTreeSet<String>,
}

impl ContainmentSplit {
    /// CPass as a share of the class's tasks.
    pub fn cpass_pct(&self) -> f64 {
        ratio_pct(self.cpass.len(), self.total)
    }

    /// BPass as a share of CPass.
    pub fn bpass_pct(&self) -> f64 {
        ratio_pct(self.bpass.len(), self.cpass.len())
    }
}

fn ratio_pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub k: usize,
    pub pass_sets: BTreeMap<ConditionName, BTreeSet<String>>,
    /// Every pair, then all conditions together.
    pub intersections: Vec<Intersection>,
    pub union: BTreeSet<String>,
    /// The union covers every task.
    pub coverage_complete: bool,
    /// Present when Context and API were both run.
    pub containment: Vec<ContainmentSplit>,
    /// Tasks Pure passes; left out of the containment split.
    pub trivially_passed: BTreeSet<String>,
}

/// Pass sets at Pass@`k` and their intersections for `conditions`, plus the
/// containment split when Context and API are available.
pub fn intersection_report(
    outcomes: &RunOutcomes,
    conditions: &[ConditionName],
    containment: &BTreeMap<String, Containment>,
    k: usize,
) -> Result<IntersectionReport, EvalError> {
    let mut all: Vec<ConditionName> = conditions.to_vec();
    for extra in [ConditionName::Pure, ConditionName::Context, ConditionName::Api] {
        if outcomes.contains_key(&extra) && !all.contains(&extra) {
            all.push(extra);
        }
    }
    let tasks = check_task_sets(outcomes, &all)?;
    let pass_sets: BTreeMap<ConditionName, BTreeSet<String>> =
        all.iter().map(|c| (*c, pass_set(&outcomes[c], k))).collect();

    let mut intersections = Vec::new();
    for (i, a) in conditions.iter().enumerate() {
        for b in &conditions[i + 1..] {
            let tasks = pass_sets[a].intersection(&pass_sets[b]).cloned().collect();
            intersections.push(Intersection { conditions: vec![*a, *b], tasks });
        }
    }
    if conditions.len() > 2 {
        let mut common = pass_sets[&conditions[0]].clone();
        for c in &conditions[1..] {
            common = common.intersection(&pass_sets[c]).cloned().collect();
        }
        intersections.push(Intersection { conditions: conditions.to_vec(), tasks: common });
    }
    let union: BTreeSet<String> = conditions.iter().flat_map(|c| pass_sets[c].iter().cloned()).collect();

    let trivially_passed = pass_sets.get(&ConditionName::Pure).cloned().unwrap_or_default();
    let mut splits = Vec::new();
    if let (Some(ctx), Some(api)) = (pass_sets.get(&ConditionName::Context), pass_sets.get(&ConditionName::Api)) {
        for class in
            [ContainmentClass::FullyContained, ContainmentClass::PartiallyContained, ContainmentClass::NotIncluded]
        {
            let members: BTreeSet<&String> = tasks
                .iter()
                .filter(|t| !trivially_passed.contains(*t))
                .filter(|t| containment.get(*t).is_some_and(|c| !c.vacuous && c.class == class))
                .collect();
            let cpass: BTreeSet<String> = members.iter().filter(|t| ctx.contains(**t)).map(|t| (*t).clone()).collect();
            let bpass = cpass.iter().filter(|t| api.contains(*t)).cloned().collect();
            splits.push(ContainmentSplit { class, total: members.len(), cpass, bpass });
        }
    }
    Ok(IntersectionReport {
        k,
        coverage_complete: union == tasks,
        pass_sets,
        intersections,
        union,
        containment: splits,
        trivially_passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountClass {
    Higher,
    Equal,
    Lower,
}

pub fn classify_count(retrieved: usize, oracle: usize) -> CountClass {
    match retrieved.cmp(&oracle) {
        std::cmp::Ordering::Greater => CountClass::Higher,
        std::cmp::Ordering::Equal => CountClass::Equal,
        std::cmp::Ordering::Less => CountClass::Lower,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub task_id: String,
    /// Size of the deduplicated retrieved set.
    pub retrieved: usize,
    /// Size of the oracle set; `None` when it could not be derived.
    pub oracle: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountComparisonReport {
    pub higher: usize,
    pub equal: usize,
    pub lower: usize,
    /// Tasks without a usable oracle set.
    pub excluded: Vec<String>,
}

impl CountComparisonReport {
    pub fn total(&self) -> usize {
        self.higher + self.equal + self.lower
    }

    /// `(higher, equal, lower)` as percentages of the classified tasks.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let t = self.total();
        (ratio_pct(self.higher, t), ratio_pct(self.equal, t), ratio_pct(self.lower, t))
    }
}

/// Classifies every task by retrieved versus oracle API count. Tasks with a
/// missing or empty oracle set are excluded.
pub fn api_count_comparison(entries: &[CountEntry]) -> CountComparisonReport {
    let mut report = CountComparisonReport::default();
    for e in entries {
        match e.oracle {
            Some(oracle) if oracle > 0 => match classify_count(e.retrieved, oracle) {
                CountClass::Higher => report.higher += 1,
                CountClass::Equal => report.equal += 1,
                CountClass::Lower => report.lower += 1,
            },
            _ => report.excluded.push(e.task_id.clone()),
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub task_id: String,
    pub oracle: BTreeSet<ApiId>,
    pub retrieved: BTreeSet<ApiId>,
    /// APIs defined in or called from the task's context.
    pub context: BTreeSet<ApiId>,
    pub passed_by_run: bool,
    pub passed_by_oracle_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Mean per-task recall over tasks with a non-empty oracle set, in `[0, 1]`.
    pub recall: f64,
    /// Same, over tasks passed by both the run and the ConAPI run.
    pub brecall: Option<f64>,
    /// Recall counting context APIs as retrieved.
    pub crecall: f64,
    pub tasks: usize,
    pub both_passed_tasks: usize,
    pub excluded: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn recall_metrics(entries: &[RecallEntry]) -> RecallReport {
    let mut recall = Vec::new();
    let mut brecall = Vec::new();
    let mut crecall = Vec::new();
    let mut excluded = Vec::new();
    for e in entries {
        if e.oracle.is_empty() {
            excluded.push(e.task_id.clone());
            continue;
        }
        let n = e.oracle.len() as f64;
        let hit = e.oracle.intersection(&e.retrieved).count() as f64 / n;
        let with_context =
            e.oracle.iter().filter(|a| e.retrieved.contains(*a) || e.context.contains(*a)).count() as f64 / n;
        recall.push(hit);
        crecall.push(with_context);
        if e.passed_by_run && e.passed_by_oracle_run {
            brecall.push(hit);
        }
    }
    RecallReport {
        recall: mean(&recall),
        brecall: (!brecall.is_empty()).then(|| mean(&brecall)),
        crecall: mean(&crecall),
        tasks: recall.len(),
        both_passed_tasks: brecall.len(),
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub count: usize,
    pub min: Option<usize>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<usize>,
}

impl LengthSummary {
    pub fn of(values: &[usize]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable();
        if v.is_empty() {
            return LengthSummary { count: 0, min: None, median: None, mean: None, max: None };
        }
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[mid] as f64 } else { (v[mid - 1] + v[mid]) as f64 / 2.0 };
        LengthSummary {
            count: v.len(),
            min: v.first().copied(),
            median: Some(median),
            mean: Some(v.iter().sum::<usize>() as f64 / v.len() as f64),
            max: v.last().copied(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub both_pass: LengthSummary,
    pub api_only_pass: LengthSummary,
    pub both_pass_tasks: BTreeSet<String>,
    pub api_only_pass_tasks: BTreeSet<String>,
}

/// Splits API's passing tasks into those ConAPI also passes and those only
/// API passes, and summarizes `lengths` (task → prompt tokens) for each.
pub fn prompt_length_analysis(
    lengths: &BTreeMap<String, usize>,
    api_pass: &BTreeSet<String>,
    con_api_pass: &BTreeSet<String>,
) -> LengthReport {
    let both: BTreeSet<String> = api_pass.intersection(con_api_pass).cloned().collect();
    let api_only: BTreeSet<String> = api_pass.difference(con_api_pass).cloned().collect();
    let pick = |set: &BTreeSet<String>| -> Vec<usize> { set.iter().filter_map(|t| lengths.get(t).copied()).collect() };
    LengthReport {
        both_pass: LengthSummary::of(&pick(&both)),
        api_only_pass: LengthSummary::of(&pick(&api_only)),
        both_pass_tasks: both,
        api_only_pass_tasks: api_only,
    }
}
