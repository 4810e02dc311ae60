use std::collections::BTreeSet;

use super::prompt::{assemble_prompt, PromptBundle, PromptInputs};
use super::query::{extend_api_descriptions, generate_api_descriptions, generate_steps};
use super::{
    CandidateOutcome, Condition, ConditionName, GenerationRecord, PipelineError, QueryArtifacts, RECORD_SCHEMA_VERSION,
};
use crate::corpus::{ApiId, ApiUnit, CodeWindow, Corpus, GenerationTask};
use crate::gateway::{
    default_examples, extract_code, render_template, Bindings, ChatRequest, Gateway, GatewayError, PromptExample,
    StageTag, DEFAULT_TEMPERATURE,
};
use crate::retrieval::{embed, retrieve_apis, retrieve_similar, ApiRetrievalSet, EmbeddingProvider, VectorIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub model: String,
    pub temperature: f64,
    pub k_samples: u32,
    pub top_k_similar: usize,
    /// Prompt budget in estimated tokens; `None` disables truncation.
    pub token_limit: Option<usize>,
    pub steps_examples: Vec<PromptExample>,
    pub api_desc_examples: Vec<PromptExample>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            model: "gpt-4o-mini".into(),
            temperature: DEFAULT_TEMPERATURE,
            k_samples: 5,
            top_k_similar: 5,
            token_limit: Some(16_000),
            steps_examples: default_examples(StageTag::Steps),
            api_desc_examples: default_examples(StageTag::ApiDescs),
        }
    }
}

/// Prebuilt retrieval state shared by every task of a repository.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub corpus: &'a Corpus,
    pub provider: &'a dyn EmbeddingProvider,
    /// Repository API index (descriptions, or code for the ablation).
    pub api_index: Option<&'a VectorIndex>,
    /// Code-window index for similar-code retrieval.
    pub window_index: Option<&'a VectorIndex>,
    pub windows: &'a [CodeWindow],
}

#[derive(Clone, Copy)]
pub struct PipelineContext<'a> {
    pub gateway: &'a Gateway,
    pub settings: &'a PipelineSettings,
    pub resources: Resources<'a>,
}

/// Produces `k_samples` records for one task under an oracle study
/// condition, or delegates to [`run_alliancecoder`].
pub fn run_condition(
    ctx: &PipelineContext<'_>,
    task: &GenerationTask,
    name: ConditionName,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    if name == ConditionName::AllianceCoder {
        return run_alliancecoder(ctx, task);
    }
    let condition = Condition::new(name);
    let corpus = ctx.resources.corpus;
    let apis = condition.use_api.then(|| task.oracle_units(corpus));
    let similar = if condition.use_similar {
        let index = ctx
            .resources
            .window_index
            .ok_or(PipelineError::MissingResource { condition: name, resource: "code-window index" })?;
        if index.is_empty() {
            Some(Vec::new())
        } else {
            let key = embed(&task.reference_solution, ctx.resources.provider)?;
            let target = Some((task.target_path.as_str(), task.target_span));
            Some(retrieve_similar(&key, index, ctx.resources.windows, target, ctx.settings.top_k_similar)?)
        }
    } else {
        None
    };
    let prompt = assemble_prompt(PromptInputs {
        condition,
        task,
        apis,
        similar: similar.as_deref(),
        token_limit: ctx.settings.token_limit,
    })?;
    sample(ctx, task, name, &prompt, None, None)
}

/// Steps, predicted descriptions, extension, top-1 retrieval per
/// description, then generation with the retrieved APIs and the context.
///
/// When nothing is retrieved the API block is left out and the prompt is
/// the Context condition's.
pub fn run_alliancecoder(
    ctx: &PipelineContext<'_>,
    task: &GenerationTask,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    let settings = ctx.settings;
    let corpus = ctx.resources.corpus;
    let index = ctx
        .resources
        .api_index
        .ok_or(PipelineError::MissingResource { condition: ConditionName::AllianceCoder, resource: "API index" })?;

    let steps = generate_steps(&task.query, &settings.steps_examples, ctx.gateway, settings);
    let predicted = generate_api_descriptions(&steps.value, &settings.api_desc_examples, ctx.gateway, settings);
    let extended = extend_api_descriptions(&predicted.value, ctx.gateway, settings);
    let mut degraded_stages = Vec::new();
    for (stage, flag) in [("steps", steps.degraded), ("api_descs", predicted.degraded), ("extend", extended.degraded)] {
        if flag {
            degraded_stages.push(stage.to_string());
        }
    }

    let mut embedded = Vec::new();
    for d in &extended.value {
        match embed(&d.text, ctx.resources.provider) {
            Ok(v) => embedded.push((d.description_id.clone(), v)),
            Err(err) => tracing::warn!(task = %task.task_id, description = %d.description_id, "not embeddable: {err}"),
        }
    }
    let exclude: BTreeSet<ApiId> = task.target_unit(corpus).map(|u| u.id.clone()).into_iter().collect();
    let retrieved = if index.is_empty() {
        ApiRetrievalSet::default()
    } else {
        retrieve_apis(embedded.iter().map(|(id, v)| (id.as_str(), v)), index, &exclude)?
    };
    let units: Vec<&ApiUnit> = retrieved
        .unique_apis()
        .iter()
        .filter_map(|id| {
            let unit = corpus.unit(id);
            if unit.is_none() {
                tracing::warn!(api = %id, "retrieved id is not in the corpus; index is stale");
            }
            unit
        })
        .collect();

    let mut condition = Condition::new(ConditionName::AllianceCoder);
    if units.is_empty() {
        condition.use_api = false;
    }
    let prompt = assemble_prompt(PromptInputs {
        condition,
        task,
        apis: condition.use_api.then_some(units),
        similar: None,
        token_limit: settings.token_limit,
    })?;
    let artifacts =
        QueryArtifacts { steps: steps.value, predicted: predicted.value, extended: extended.value, degraded_stages };
    sample(ctx, task, ConditionName::AllianceCoder, &prompt, Some(retrieved), Some(artifacts))
}

fn sample(
    ctx: &PipelineContext<'_>,
    task: &GenerationTask,
    condition: ConditionName,
    prompt: &PromptBundle,
    retrieved: Option<ApiRetrievalSet>,
    artifacts: Option<QueryArtifacts>,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    let messages = render_template(StageTag::Generate, &Bindings::from([("prompt".to_string(), prompt.render())]), &[])
        .map_err(GatewayError::from)?;
    let mut records = Vec::with_capacity(ctx.settings.k_samples as usize);
    for sample_index in 1..=ctx.settings.k_samples {
        let request = ChatRequest::new(ctx.settings.model.clone(), StageTag::Generate, messages.clone())
            .with_temperature(ctx.settings.temperature)
            .with_sample(sample_index);
        let (completion, candidate) = match ctx.gateway.complete(&request) {
            Ok(result) => {
                let candidate = match extract_code(&result.text) {
                    Ok(candidate) => CandidateOutcome::Extracted { candidate },
                    Err(_) => CandidateOutcome::Unparsable,
                };
                (Some(result.text), candidate)
            }
            Err(err) => {
                tracing::warn!(task = %task.task_id, %condition, sample_index, "generation failed: {err}");
                (None, CandidateOutcome::LlmFailure { error: err.to_string() })
            }
        };
        records.push(GenerationRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            task_id: task.task_id.clone(),
            condition,
            sample_index,
            prompt: prompt.clone(),
            completion,
            candidate,
            retrieved_apis: retrieved.clone(),
            artifacts: artifacts.clone(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::load_benchmark;
    use crate::corpus::test_support::*;
    use crate::gateway::testing::FnTransport;
    use crate::gateway::{Mode, Role};
    use crate::pipeline::{describe_repository_apis, BlockKind};
    use crate::retrieval::{HashProjection, SourceMode};

    /// Answers generation with a fenced copy of the reference of whichever
    /// function the prompt names, and everything else with canned text.
    fn echo_gateway() -> Gateway {
        let t = FnTransport::new(|req: &ChatRequest| {
            let user = &req.messages.iter().find(|m| m.role == Role::User).unwrap().content;
            Ok(match req.stage_tag {
                StageTag::Generate => "```python\ndef f(x):\n    return x\n```".to_string(),
                StageTag::Steps => "1. Read the file lines.\n2. Parse the entries.".to_string(),
                StageTag::ApiDescs => "Step 1:\n- Read a text file and return its lines.\nStep 2:\n- Parse key value lines into a dictionary.".to_string(),
                StageTag::Extend => "- none".to_string(),
                StageTag::ApiDescribe => format!("Helper: {}", user.lines().find(|l| l.starts_with("Docstring")).unwrap_or("none")),
            })
        });
        Gateway::new(Mode::Live, Some(Arc::new(t)), None)
    }

    struct Fixture {
        corpus: Corpus,
        tasks: Vec<GenerationTask>,
        provider: HashProjection,
        api_index: VectorIndex,
        windows: Vec<CodeWindow>,
        window_index: VectorIndex,
    }

    fn fixture(gw: &Gateway, settings: &PipelineSettings) -> Fixture {
        let (inc, exc) = default_globs();
        let corpus = Corpus::load(&mini_repo(), &inc, &exc).unwrap();
        let tasks = load_benchmark(&mini_bench(), &corpus).unwrap();
        let provider = HashProjection::default();
        let api_index = describe_repository_apis(&corpus, gw, &provider, settings).unwrap().index;
        let windows = corpus.windows(20, 10).unwrap();
        let items: Vec<_> = windows.iter().map(|w| (w.id(), w.text.clone())).collect();
        let window_index = VectorIndex::build(&items, &provider, SourceMode::RawCode).unwrap();
        Fixture { corpus, tasks, provider, api_index, windows, window_index }
    }

    fn ctx<'a>(gw: &'a Gateway, settings: &'a PipelineSettings, f: &'a Fixture) -> PipelineContext<'a> {
        PipelineContext {
            gateway: gw,
            settings,
            resources: Resources {
                corpus: &f.corpus,
                provider: &f.provider,
                api_index: Some(&f.api_index),
                window_index: Some(&f.window_index),
                windows: &f.windows,
            },
        }
    }

    #[test]
    fn every_condition_matches_its_flags() {
        let gw = echo_gateway();
        let settings = PipelineSettings { k_samples: 2, ..Default::default() };
        let f = fixture(&gw, &settings);
        let ctx = ctx(&gw, &settings, &f);
        let t1 = &f.tasks[0];
        for name in ConditionName::ALL {
            let records = run_condition(&ctx, t1, name).unwrap();
            assert_eq!(records.len(), 2);
            assert_eq!(records[0].prompt, records[1].prompt);
            assert_eq!(records[0].prompt.signature(), Condition::new(name).expected_signature(), "{name}");
            if Condition::new(name).use_api && name != ConditionName::AllianceCoder {
                let rendered: BTreeSet<ApiId> =
                    records[0].prompt.block(BlockKind::Api).unwrap().items.iter().map(|i| ApiId(i.clone())).collect();
                assert_eq!(rendered, t1.oracle_apis);
            }
            assert!(matches!(records[1].candidate, CandidateOutcome::Extracted { .. }));
        }
    }

    #[test]
    fn similar_windows_never_overlap_target() {
        let gw = echo_gateway();
        let settings = PipelineSettings { k_samples: 1, ..Default::default() };
        let f = fixture(&gw, &settings);
        let ctx = ctx(&gw, &settings, &f);
        for task in &f.tasks {
            let r = &run_condition(&ctx, task, ConditionName::Similar).unwrap()[0];
            let block = r.prompt.block(BlockKind::Similar).unwrap();
            assert!(!block.items.is_empty());
            for id in &block.items {
                let w = f.windows.iter().find(|w| &w.id() == id).unwrap();
                assert!(!(w.path == task.target_path && w.span().overlaps(&task.target_span)));
            }
        }
    }

    #[test]
    fn empty_window_index_gives_empty_similar_block() {
        let gw = echo_gateway();
        let settings = PipelineSettings { k_samples: 1, ..Default::default() };
        let f = fixture(&gw, &settings);
        let empty = VectorIndex::empty(f.provider.dim(), f.provider.id(), SourceMode::RawCode);
        let mut ctx = ctx(&gw, &settings, &f);
        ctx.resources.window_index = Some(&empty);
        let r = &run_condition(&ctx, &f.tasks[0], ConditionName::Similar).unwrap()[0];
        assert!(r.prompt.block(BlockKind::Similar).unwrap().items.is_empty());
    }

    #[test]
    fn alliancecoder_never_retrieves_its_own_target() {
        let gw = echo_gateway();
        let settings = PipelineSettings { k_samples: 1, ..Default::default() };
        let f = fixture(&gw, &settings);
        let ctx = ctx(&gw, &settings, &f);
        for task in &f.tasks {
            let r = &run_alliancecoder(&ctx, task).unwrap()[0];
            let own = task.target_unit(&f.corpus).unwrap();
            assert!(!r.retrieved_apis.as_ref().unwrap().unique_apis().contains(&own.id));
            assert!(r.artifacts.is_some());
        }
    }

    #[test]
    fn alliancecoder_with_no_apis_is_context() {
        let gw = echo_gateway();
        let settings = PipelineSettings { k_samples: 1, ..Default::default() };
        let f = fixture(&gw, &settings);
        let empty = VectorIndex::empty(f.provider.dim(), f.provider.id(), SourceMode::TextDescription);
        let mut ctx = ctx(&gw, &settings, &f);
        ctx.resources.api_index = Some(&empty);
        let ours = &run_alliancecoder(&ctx, &f.tasks[0]).unwrap()[0];
        let context = &run_condition(&ctx, &f.tasks[0], ConditionName::Context).unwrap()[0];
        assert_eq!(ours.prompt, context.prompt);
    }

    #[test]
    fn generation_failure_is_recorded_not_fatal() {
        let t = FnTransport::new(|req: &ChatRequest| match req.sample {
            2 => Err(crate::gateway::TransportError::Client { status: 400, body: "bad".into() }),
            _ => Ok("no code here".to_string()),
        });
        let gw = Gateway::new(Mode::Live, Some(Arc::new(t)), None);
        let settings = PipelineSettings { k_samples: 3, ..Default::default() };
        let f = fixture(&echo_gateway(), &settings);
        let ctx = ctx(&gw, &settings, &f);
        let records = run_condition(&ctx, &f.tasks[0], ConditionName::Pure).unwrap();
        let outcomes: Vec<_> = records.iter().map(|r| &r.candidate).collect();
        assert_eq!(outcomes[0], &CandidateOutcome::Unparsable);
        assert!(matches!(outcomes[1], CandidateOutcome::LlmFailure { .. }));
        assert_eq!(records.iter().map(|r| r.sample_index).collect::<Vec<_>>(), [1, 2, 3]);
    }
}
