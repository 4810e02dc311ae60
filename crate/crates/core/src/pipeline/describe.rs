use rayon::prelude::*;

use super::{ApiDescription, DescriptionStage, PipelineError, PipelineSettings};
use crate::corpus::{ApiUnit, Corpus};
use crate::gateway::{render_template, Bindings, ChatRequest, Gateway, StageTag};
use crate::retrieval::{EmbeddingProvider, SourceMode, VectorIndex};

#[derive(Debug, Clone)]
pub struct RepoDescriptions {
    /// One per unit, corpus order.
    pub descriptions: Vec<ApiDescription>,
    pub index: VectorIndex,
}

impl RepoDescriptions {
    pub fn degraded(&self) -> usize {
        self.descriptions.iter().filter(|d| d.degraded).count()
    }
}

fn fallback_text(unit: &ApiUnit) -> String {
    match &unit.doc {
        Some(doc) if !doc.trim().is_empty() => doc.trim().to_string(),
        _ => format!("{}{}", unit.qualified_name, unit.signature),
    }
}

fn describe_unit(unit: &ApiUnit, gateway: &Gateway, settings: &PipelineSettings) -> ApiDescription {
    let bindings = Bindings::from([
        ("qualified_name".to_string(), unit.qualified_name.clone()),
        ("signature".to_string(), unit.signature.clone()),
        ("doc".to_string(), unit.doc.clone().unwrap_or_else(|| "(none)".into())),
        ("body".to_string(), unit.body.trim_end().to_string()),
    ]);
    let messages = render_template(StageTag::ApiDescribe, &bindings, &[]).expect("describe template slots are bound");
    let request = ChatRequest::new(settings.model.clone(), StageTag::ApiDescribe, messages)
        .with_temperature(settings.temperature);
    let (text, degraded) = match gateway.complete(&request) {
        Ok(r) if !r.text.trim().is_empty() => (r.text.trim().to_string(), false),
        Ok(_) => {
            tracing::warn!(api = %unit.qualified_name, "empty description, falling back to doc/signature");
            (fallback_text(unit), true)
        }
        Err(err) => {
            tracing::warn!(api = %unit.qualified_name, "description failed, falling back to doc/signature: {err}");
            (fallback_text(unit), true)
        }
    };
    let mut d = ApiDescription::new(unit.id.to_string(), text, DescriptionStage::Repo);
    d.api_id = Some(unit.id.clone());
    d.degraded = degraded;
    d
}

/// Index input for every unit: its description, or its source code for the
/// raw-code ablation.
pub fn index_items(corpus: &Corpus, descriptions: &[ApiDescription], mode: SourceMode) -> Vec<(String, String)> {
    match mode {
        SourceMode::TextDescription => {
            descriptions.iter().map(|d| (d.description_id.clone(), d.text.clone())).collect()
        }
        SourceMode::RawCode => corpus.units.iter().map(|u| (u.id.to_string(), u.body.clone())).collect(),
    }
}

/// Describes every API unit with the model, then embeds the descriptions.
/// A unit whose call fails keeps its doc (or signature) as text and is
/// flagged degraded.
pub fn describe_repository_apis(
    corpus: &Corpus,
    gateway: &Gateway,
    provider: &dyn EmbeddingProvider,
    settings: &PipelineSettings,
) -> Result<RepoDescriptions, PipelineError> {
    let descriptions: Vec<ApiDescription> =
        corpus.units.par_iter().map(|u| describe_unit(u, gateway, settings)).collect();
    let items = index_items(corpus, &descriptions, SourceMode::TextDescription);
    let index = VectorIndex::build(&items, provider, SourceMode::TextDescription)?;
    Ok(RepoDescriptions { descriptions, index })
}
