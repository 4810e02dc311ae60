use serde::{Deserialize, Serialize};

use super::{ApiSource, Condition, PipelineError};
use crate::corpus::{ApiUnit, GenerationTask};
use crate::retrieval::SimilarWindow;

pub const TOKEN_ESTIMATOR: &str = "bytes/4";

/// Rough token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Api,
    Similar,
    Context,
    Query,
}

impl BlockKind {
    pub(crate) fn label(self, source: Option<ApiSource>) -> String {
        match (self, source) {
            (BlockKind::Api, Some(ApiSource::Oracle)) => "api:oracle".into(),
            (BlockKind::Api, Some(ApiSource::Predicted)) => "api:predicted".into(),
            (BlockKind::Api, None) => "api".into(),
            (BlockKind::Similar, _) => "similar".into(),
            (BlockKind::Context, _) => "context".into(),
            (BlockKind::Query, _) => "query".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ApiSource>,
    /// Api ids or window ids rendered in this block, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub blocks: Vec<Block>,
    pub token_estimate: usize,
    pub token_estimator: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl PromptBundle {
    /// Blocks joined by blank lines; what the generation template receives.
    pub fn render(&self) -> String {
        self.blocks.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    /// Block layout such as `api:oracle+context+query`.
    pub fn signature(&self) -> String {
        self.blocks.iter().map(|b| b.kind.label(b.source)).collect::<Vec<_>>().join("+")
    }

    pub fn block(&self, kind: BlockKind) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == kind)
    }
}

pub struct PromptInputs<'a> {
    pub condition: Condition,
    pub task: &'a GenerationTask,
    /// Units for the API block, in render order.
    pub apis: Option<Vec<&'a ApiUnit>>,
    /// Similar windows, best first.
    pub similar: Option<&'a [SimilarWindow]>,
    /// Budget in estimated tokens; `None` disables truncation.
    pub token_limit: Option<usize>,
}

fn api_block(units: &[&ApiUnit], with_body: usize, source: ApiSource) -> Block {
    let mut text = String::from("Repository APIs that may be useful:");
    if units.is_empty() {
        text.push_str("\n(none)");
    }
    for (i, unit) in units.iter().enumerate() {
        text.push_str(&format!("\n\n## {}{}", unit.qualified_name, unit.signature));
        if let Some(doc) = &unit.doc {
            text.push('\n');
            text.push_str(doc);
        }
        if i < with_body {
            text.push_str(&format!("\n```python\n{}\n```", unit.body.trim_end()));
        }
    }
    Block { kind: BlockKind::Api, source: Some(source), items: units.iter().map(|u| u.id.to_string()).collect(), text }
}

fn similar_block(windows: &[SimilarWindow]) -> Block {
    let mut text = String::from("Similar code from the repository:");
    if windows.is_empty() {
        text.push_str("\n(none)");
    }
    for w in windows {
        let w = &w.window;
        text.push_str(&format!(
            "\n\n## {} lines {}-{}\n```python\n{}\n```",
            w.path,
            w.start_line,
            w.end_line,
            w.text.trim_end()
        ));
    }
    Block { kind: BlockKind::Similar, source: None, items: windows.iter().map(|w| w.window.id()).collect(), text }
}

fn context_block(task: &GenerationTask) -> Block {
    let text = format!(
        "Code preceding the target function in `{}`:\n```python\n{}\n```",
        task.target_path,
        task.context_block.trim_end()
    );
    Block { kind: BlockKind::Context, source: None, items: Vec::new(), text }
}

fn query_block(task: &GenerationTask) -> Block {
    Block {
        kind: BlockKind::Query,
        source: None,
        items: Vec::new(),
        text: format!("Target function:\n{}", task.query.trim_end()),
    }
}

fn bundle(blocks: Vec<Block>, truncated: bool) -> PromptBundle {
    let mut b = PromptBundle { blocks, token_estimate: 0, token_estimator: TOKEN_ESTIMATOR.into(), truncated };
    b.token_estimate = estimate_tokens(&b.render());
    b
}

/// Lays out the blocks a condition calls for: API, similar, context, query.
///
/// Over budget, API bodies are dropped from the last unit backwards, then
/// similar windows from the lowest ranked. Context and query are kept whole
/// even if the prompt still exceeds the budget.
pub fn assemble_prompt(inputs: PromptInputs<'_>) -> Result<PromptBundle, PipelineError> {
    let c = inputs.condition;
    if c.use_api != inputs.apis.is_some() {
        return Err(PipelineError::Assembly(format!(
            "{} {} an API block but {} supplied",
            c.name,
            if c.use_api { "needs" } else { "has no" },
            if inputs.apis.is_some() { "one was" } else { "none was" }
        )));
    }
    if c.use_similar != inputs.similar.is_some() {
        return Err(PipelineError::Assembly(format!(
            "{} {} a similar-code block but {} supplied",
            c.name,
            if c.use_similar { "needs" } else { "has no" },
            if inputs.similar.is_some() { "one was" } else { "none was" }
        )));
    }
    let units = inputs.apis.unwrap_or_default();
    let similar = inputs.similar.unwrap_or_default();
    let mut bodies = units.len();
    let mut windows = similar.len();

    let build = |bodies: usize, windows: usize, truncated: bool| {
        let mut blocks = Vec::with_capacity(4);
        if c.use_api {
            blocks.push(api_block(&units, bodies, c.api_source));
        }
        if c.use_similar {
            blocks.push(similar_block(&similar[..windows]));
        }
        if c.use_context {
            blocks.push(context_block(inputs.task));
        }
        blocks.push(query_block(inputs.task));
        bundle(blocks, truncated)
    };

    let mut out = build(bodies, windows, false);
    let Some(limit) = inputs.token_limit else { return Ok(out) };
    while out.token_estimate > limit && (bodies > 0 || windows > 0) {
        if bodies > 0 {
            bodies -= 1;
        } else {
            windows -= 1;
        }
        out = build(bodies, windows, true);
    }
    if out.token_estimate > limit {
        tracing::warn!(task = %inputs.task.task_id, condition = %c.name, estimate = out.token_estimate, limit, "prompt exceeds budget after truncation");
    }
    Ok(out)
}
