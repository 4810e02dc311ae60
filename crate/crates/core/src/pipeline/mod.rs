//! Retrieve-then-generate orchestration: repository API description, staged
//! query processing, prompt assembly and the condition matrix.

mod describe;
mod prompt;
mod query;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ApiId;
use crate::gateway::{CodeCandidate, GatewayError};
use crate::retrieval::{ApiRetrievalSet, RetrievalError, Vector};

pub use describe::{describe_repository_apis, index_items, RepoDescriptions};
pub use prompt::{assemble_prompt, estimate_tokens, Block, BlockKind, PromptBundle, PromptInputs, TOKEN_ESTIMATOR};
pub use query::{
    extend_api_descriptions, generate_api_descriptions, generate_steps, parse_api_descriptions, parse_extensions,
    parse_steps, StageOutcome,
};
pub use run::{run_alliancecoder, run_condition, PipelineContext, PipelineSettings, Resources};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("prompt assembly: {0}")]
    Assembly(String),
    #[error("condition {condition} needs the {resource}, which was not built")]
    MissingResource { condition: ConditionName, resource: &'static str },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionName {
    Pure,
    Context,
    Similar,
    #[serde(rename = "API")]
    Api,
    ConSim,
    #[serde(rename = "ConAPI")]
    ConApi,
    #[serde(rename = "SimAPI")]
    SimApi,
    #[serde(rename = "ConSimAPI")]
    ConSimApi,
    AllianceCoder,
}

impl ConditionName {
    /// The eight oracle study conditions, in table order.
    pub const STUDY: [ConditionName; 8] = [
        ConditionName::Pure,
        ConditionName::Context,
        ConditionName::Similar,
        ConditionName::Api,
        ConditionName::ConSim,
        ConditionName::ConApi,
        ConditionName::SimApi,
        ConditionName::ConSimApi,
    ];

    pub const ALL: [ConditionName; 9] = [
        ConditionName::Pure,
        ConditionName::Context,
        ConditionName::Similar,
        ConditionName::Api,
        ConditionName::ConSim,
        ConditionName::ConApi,
        ConditionName::SimApi,
        ConditionName::ConSimApi,
        ConditionName::AllianceCoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionName::Pure => "Pure",
            ConditionName::Context => "Context",
            ConditionName::Similar => "Similar",
            ConditionName::Api => "API",
            ConditionName::ConSim => "ConSim",
            ConditionName::ConApi => "ConAPI",
            ConditionName::SimApi => "SimAPI",
            ConditionName::ConSimApi => "ConSimAPI",
            ConditionName::AllianceCoder => "AllianceCoder",
        }
    }

    /// Parses a comma-separated list; `all8` expands to the study matrix
    /// and `all` to every condition.
    pub fn parse_list(spec: &str) -> Result<Vec<ConditionName>, String> {
        let mut out = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let expanded: Vec<ConditionName> = match part {
                "all8" => Self::STUDY.to_vec(),
                "all" => Self::ALL.to_vec(),
                name => vec![name.parse()?],
            };
            for c in expanded {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        if out.is_empty() {
            return Err("no conditions given".into());
        }
        Ok(out)
    }
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|c| c.as_str()).collect();
            format!("unknown condition `{s}` (expected one of {}, all8, all)", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiSource {
    /// The APIs the reference solution actually calls.
    Oracle,
    /// APIs retrieved from predicted descriptions.
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub name: ConditionName,
    pub use_context: bool,
    pub use_similar: bool,
    pub use_api: bool,
    pub api_source: ApiSource,
}

impl Condition {
    pub fn new(name: ConditionName) -> Self {
        use ConditionName::*;
        let (use_context, use_similar, use_api) = match name {
            Pure => (false, false, false),
            Context => (true, false, false),
            Similar => (false, true, false),
            Api => (false, false, true),
            ConSim => (true, true, false),
            ConApi => (true, false, true),
            SimApi => (false, true, true),
            ConSimApi => (true, true, true),
            AllianceCoder => (true, false, true),
        };
        let api_source = if name == AllianceCoder { ApiSource::Predicted } else { ApiSource::Oracle };
        Condition { name, use_context, use_similar, use_api, api_source }
    }

    /// The block layout this condition's prompts must have.
    pub fn expected_signature(&self) -> String {
        let mut parts = Vec::new();
        if self.use_api {
            parts.push(BlockKind::Api.label(Some(self.api_source)));
        }
        if self.use_similar {
            parts.push(BlockKind::Similar.label(None));
        }
        if self.use_context {
            parts.push(BlockKind::Context.label(None));
        }
        parts.push(BlockKind::Query.label(None));
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplementationStep {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionStage {
    Repo,
    Predicted,
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDescription {
    pub description_id: String,
    pub text: String,
    pub stage: DescriptionStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_step: Option<usize>,
    /// The described unit, for repository-stage descriptions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_id: Option<ApiId>,
    /// Set when the text is a fallback rather than a model description.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
    #[serde(skip)]
    pub vector: Option<Vector>,
}

impl ApiDescription {
    pub fn new(description_id: impl Into<String>, text: impl Into<String>, stage: DescriptionStage) -> Self {
        ApiDescription {
            description_id: description_id.into(),
            text: text.into(),
            stage,
            origin_step: None,
            api_id: None,
            degraded: false,
            vector: None,
        }
    }
}

/// Intermediate artifacts of the staged query processing, kept on every
/// record of the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryArtifacts {
    pub steps: Vec<ImplementationStep>,
    pub predicted: Vec<ApiDescription>,
    /// Originals plus refinements; what retrieval ran on.
    pub extended: Vec<ApiDescription>,
    /// Stages that fell back to their degraded behaviour.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degraded_stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateOutcome {
    Extracted { candidate: CodeCandidate },
    Unparsable,
    LlmFailure { error: String },
}

impl CandidateOutcome {
    pub fn candidate(&self) -> Option<&CodeCandidate> {
        match self {
            CandidateOutcome::Extracted { candidate } => Some(candidate),
            _ => None,
        }
    }
}

/// One generated sample. Written once, before evaluation; verdicts live in
/// a separate file keyed by `(task_id, condition, sample_index)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub schema_version: u32,
    pub task_id: String,
    pub condition: ConditionName,
    pub sample_index: u32,
    pub prompt: PromptBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    pub candidate: CandidateOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_apis: Option<ApiRetrievalSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<QueryArtifacts>,
}

impl GenerationRecord {
    pub fn key(&self) -> (String, ConditionName, u32) {
        (self.task_id.clone(), self.condition, self.sample_index)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn names_round_trip() {
        for c in ConditionName::ALL {
            assert_eq!(c.as_str().parse::<ConditionName>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert!("Bogus".parse::<ConditionName>().unwrap_err().contains("ConSimAPI"));
    }

    #[test]
    fn list_expansion() {
        assert_eq!(ConditionName::parse_list("all8").unwrap().len(), 8);
        assert_eq!(ConditionName::parse_list("ConAPI, AllianceCoder, ConAPI").unwrap().len(), 2);
        assert_eq!(ConditionName::parse_list("all").unwrap(), ConditionName::ALL);
        assert!(ConditionName::parse_list("").is_err());
    }

    #[test]
    fn nine_distinct_expected_signatures() {
        let sigs: BTreeSet<String> =
            ConditionName::ALL.iter().map(|&c| Condition::new(c).expected_signature()).collect();
        assert_eq!(sigs.len(), 9);
        let study: BTreeSet<String> =
            ConditionName::STUDY.iter().map(|&c| Condition::new(c).expected_signature()).collect();
        assert_eq!(study.len(), 8);
        assert_eq!(Condition::new(ConditionName::Pure).expected_signature(), "query");
        assert_eq!(Condition::new(ConditionName::ConSimApi).expected_signature(), "api:oracle+similar+context+query");
    }
}
