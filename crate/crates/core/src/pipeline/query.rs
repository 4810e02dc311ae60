//! Query processing: implementation steps, predicted API descriptions and
//! their atomic extension. Each stage degrades instead of failing the task.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{ApiDescription, DescriptionStage, ImplementationStep, PipelineSettings};
use crate::gateway::{render_template, Bindings, ChatRequest, Gateway, Message, PromptExample, StageTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome<T> {
    pub value: T,
    pub degraded: bool,
}

const STEPS_REMINDER: &str =
    "Your reply could not be read as a numbered list. Reply with the steps only, one per line, formatted as `1. ...`, `2. ...`.";

fn strip_number(line: &str) -> Option<&str> {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix(['.', ')'])?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let text = rest.trim();
    (!text.is_empty()).then_some(text)
}

fn strip_bullet(line: &str) -> Option<&str> {
    let rest = line.strip_prefix(['-', '*', '•'])?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let text = rest.trim();
    (!text.is_empty()).then_some(text)
}

fn is_none_marker(text: &str) -> bool {
    text.trim_end_matches('.').eq_ignore_ascii_case("none")
}

/// Reads a numbered list. Indented unnumbered lines continue the previous
/// step. Steps are renumbered from 1 in the order given.
pub fn parse_steps(completion: &str) -> Option<Vec<ImplementationStep>> {
    let mut steps: Vec<ImplementationStep> = Vec::new();
    for raw in completion.lines() {
        let line = raw.trim();
        if let Some(text) = strip_number(line) {
            steps.push(ImplementationStep { index: steps.len() + 1, text: text.to_string() });
        } else if !line.is_empty() && raw.starts_with(char::is_whitespace) {
            if let Some(last) = steps.last_mut() {
                last.text.push(' ');
                last.text.push_str(line);
            }
        }
    }
    (!steps.is_empty()).then_some(steps)
}

fn step_header(line: &str) -> Option<usize> {
    let lower = line.to_ascii_lowercase();
    let rest = lower.strip_prefix("step")?.trim_start();
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    let after = rest[digits.len()..].trim_start();
    if digits.is_empty() || !(after.starts_with(':') || after.is_empty()) {
        return None;
    }
    digits.parse().ok()
}

/// Reads `Step N:` sections of bullets. Bullets outside any section have no
/// origin step; `- none` bullets are dropped.
pub fn parse_api_descriptions(completion: &str, n_steps: usize) -> Option<Vec<(Option<usize>, String)>> {
    let mut out = Vec::new();
    let mut current = None;
    let mut structured = false;
    for line in completion.lines().map(str::trim) {
        if let Some(n) = step_header(line) {
            structured = true;
            current = (1..=n_steps).contains(&n).then_some(n);
        } else if let Some(text) = strip_bullet(line) {
            structured = true;
            if !is_none_marker(text) {
                out.push((current, text.to_string()));
            }
        }
    }
    structured.then_some(out)
}

/// Reads `- [n] text` bullets naming the description they refine.
pub fn parse_extensions(completion: &str, n_originals: usize) -> Option<Vec<(Option<usize>, String)>> {
    let mut out = Vec::new();
    let mut structured = false;
    for line in completion.lines().map(str::trim) {
        let Some(text) = strip_bullet(line) else { continue };
        structured = true;
        if is_none_marker(text) {
            continue;
        }
        let (origin, text) = match text.strip_prefix('[').and_then(|r| r.split_once(']')) {
            Some((n, rest)) => (n.trim().parse().ok().filter(|n| (1..=n_originals).contains(n)), rest.trim()),
            None => (None, text),
        };
        if !text.is_empty() {
            out.push((origin, text.to_string()));
        }
    }
    structured.then_some(out)
}

fn request(settings: &PipelineSettings, stage: StageTag, messages: Vec<Message>) -> ChatRequest {
    ChatRequest::new(settings.model.clone(), stage, messages).with_temperature(settings.temperature)
}

fn render(stage: StageTag, bindings: Bindings, examples: &[PromptExample]) -> Vec<Message> {
    render_template(stage, &bindings, examples).expect("stage templates bind every slot")
}

/// Decomposes `query` into numbered steps. An unreadable reply gets one
/// retry with a format reminder; after that the query itself is the only
/// step.
pub fn generate_steps(
    query: &str,
    examples: &[PromptExample],
    gateway: &Gateway,
    settings: &PipelineSettings,
) -> StageOutcome<Vec<ImplementationStep>> {
    let fallback = || StageOutcome {
        value: vec![ImplementationStep { index: 1, text: query.trim().to_string() }],
        degraded: true,
    };
    let messages = render(StageTag::Steps, Bindings::from([("query".to_string(), query.trim().to_string())]), examples);
    let first = match gateway.complete(&request(settings, StageTag::Steps, messages.clone())) {
        Ok(r) => r.text,
        Err(err) => {
            tracing::warn!("steps stage failed, using the query as the only step: {err}");
            return fallback();
        }
    };
    if let Some(steps) = parse_steps(&first) {
        return StageOutcome { value: steps, degraded: false };
    }
    let mut retry = messages;
    retry.push(Message::assistant(first));
    retry.push(Message::user(STEPS_REMINDER));
    match gateway.complete(&request(settings, StageTag::Steps, retry)) {
        Ok(r) => match parse_steps(&r.text) {
            Some(steps) => StageOutcome { value: steps, degraded: false },
            None => fallback(),
        },
        Err(err) => {
            tracing::warn!("steps retry failed, using the query as the only step: {err}");
            fallback()
        }
    }
}

fn dedup_texts(descs: Vec<ApiDescription>) -> Vec<ApiDescription> {
    let mut seen = HashSet::new();
    descs.into_iter().filter(|d| seen.insert(d.text.clone())).collect()
}

/// Predicts descriptions of repository functions each step may call.
pub fn generate_api_descriptions(
    steps: &[ImplementationStep],
    examples: &[PromptExample],
    gateway: &Gateway,
    settings: &PipelineSettings,
) -> StageOutcome<Vec<ApiDescription>> {
    if steps.is_empty() {
        return StageOutcome { value: Vec::new(), degraded: false };
    }
    let listing: Vec<String> = steps.iter().map(|s| format!("{}. {}", s.index, s.text)).collect();
    let messages = render(StageTag::ApiDescs, Bindings::from([("steps".to_string(), listing.join("\n"))]), examples);
    let parsed = match gateway.complete(&request(settings, StageTag::ApiDescs, messages)) {
        Ok(r) => parse_api_descriptions(&r.text, steps.len()),
        Err(err) => {
            tracing::warn!("api description stage failed: {err}");
            None
        }
    };
    let degraded = parsed.is_none();
    let descs = parsed
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, (origin, text))| {
            let mut d = ApiDescription::new(format!("p{}", i + 1), text, DescriptionStage::Predicted);
            d.origin_step = origin;
            d
        })
        .collect();
    StageOutcome { value: dedup_texts(descs), degraded }
}

/// Splits composite descriptions into atomic ones. Returns the originals
/// followed by the refinements, exact duplicates removed.
pub fn extend_api_descriptions(
    descs: &[ApiDescription],
    gateway: &Gateway,
    settings: &PipelineSettings,
) -> StageOutcome<Vec<ApiDescription>> {
    if descs.is_empty() {
        return StageOutcome { value: Vec::new(), degraded: false };
    }
    let listing: Vec<String> = descs.iter().enumerate().map(|(i, d)| format!("[{}] {}", i + 1, d.text)).collect();
    let messages = render(StageTag::Extend, Bindings::from([("descriptions".to_string(), listing.join("\n"))]), &[]);
    let parsed = match gateway.complete(&request(settings, StageTag::Extend, messages)) {
        Ok(r) => parse_extensions(&r.text, descs.len()),
        Err(err) => {
            tracing::warn!("extension stage failed, keeping predicted descriptions: {err}");
            None
        }
    };
    let degraded = parsed.is_none();
    let mut all = descs.to_vec();
    for (i, (origin, text)) in parsed.unwrap_or_default().into_iter().enumerate() {
        let mut d = ApiDescription::new(format!("e{}", i + 1), text, DescriptionStage::Extended);
        d.origin_step = origin.and_then(|n: usize| descs[n - 1].origin_step);
        all.push(d);
    }
    StageOutcome { value: dedup_texts(all), degraded }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::testing::FnTransport;
    use crate::gateway::{Mode, RetryPolicy, TransportError};

    fn scripted(replies: Vec<&'static str>) -> Gateway {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let transport = FnTransport::new(move |_req: &ChatRequest| {
            let i = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            match replies.get(i) {
                Some(text) => Ok(text.to_string()),
                None => Err(TransportError::Client { status: 400, body: "no more replies".into() }),
            }
        });
        Gateway::new(Mode::Live, Some(Arc::new(transport)), None)
            .with_retry(RetryPolicy { attempts: 1, initial_backoff: std::time::Duration::ZERO })
    }

    #[test]
    fn minimal_step_parse() {
        let steps = parse_steps("1. do X").unwrap();
        assert_eq!(steps, [ImplementationStep { index: 1, text: "do X".into() }]);
        let steps = parse_steps("Plan:\n1) open\n   the file\n3. read it\n\nDone.").unwrap();
        let texts: Vec<_> = steps.iter().map(|s| (s.index, s.text.as_str())).collect();
        assert_eq!(texts, [(1, "open the file"), (2, "read it")]);
        assert!(parse_steps("Just write the function.").is_none());
        assert!(parse_steps("2024 was a year").is_none());
    }

    #[test]
    fn prose_steps_degrade_after_one_retry() {
        let gw = scripted(vec!["I would just write it.", "Still prose."]);
        let out = generate_steps("Sum the list.", &[], &gw, &PipelineSettings::default());
        assert!(out.degraded);
        assert_eq!(out.value, [ImplementationStep { index: 1, text: "Sum the list.".into() }]);
        assert_eq!(gw.counters().provider_calls, 2);
    }

    #[test]
    fn retry_with_reminder_recovers() {
        let gw = scripted(vec!["Sure!", "1. add\n2. return"]);
        let out = generate_steps("Sum.", &[], &gw, &PipelineSettings::default());
        assert!(!out.degraded);
        assert_eq!(out.value.len(), 2);
    }

    #[test]
    fn api_description_sections() {
        let text = "Step 1:\n- Read all lines of a file.\nStep 2:\n- none\nStep 3:\n- Parse entries.\n- Normalize a key.\nStep 9:\n- Stray.";
        let got = parse_api_descriptions(text, 3).unwrap();
        assert_eq!(
            got,
            [
                (Some(1), "Read all lines of a file.".to_string()),
                (Some(3), "Parse entries.".to_string()),
                (Some(3), "Normalize a key.".to_string()),
                (None, "Stray.".to_string()),
            ]
        );
        assert_eq!(parse_api_descriptions("Step 1:\n- none", 1).unwrap(), []);
        assert!(parse_api_descriptions("no structure here", 2).is_none());
    }

    #[test]
    fn predicted_descriptions_carry_origin_and_dedup() {
        let gw = scripted(vec!["Step 1:\n- Read lines.\nStep 2:\n- Read lines.\n- Add numbers."]);
        let steps = parse_steps("1. a\n2. b").unwrap();
        let out = generate_api_descriptions(&steps, &[], &gw, &PipelineSettings::default());
        let got: Vec<_> =
            out.value.iter().map(|d| (d.description_id.as_str(), d.origin_step, d.text.as_str())).collect();
        assert_eq!(got, [("p1", Some(1), "Read lines."), ("p3", Some(2), "Add numbers.")]);
    }

    #[test]
    fn extension_is_union_of_originals_and_splits() {
        let gw = scripted(vec![
            "- [1] Read the lines of a file.\n- [1] Parse key value entries.\n- [1] Read the lines of a file.",
        ]);
        let mut composite = ApiDescription::new("p1", "Read file and parse entries.", DescriptionStage::Predicted);
        composite.origin_step = Some(2);
        let out = extend_api_descriptions(&[composite.clone()], &gw, &PipelineSettings::default());
        assert!(!out.degraded);
        assert_eq!(out.value[0], composite);
        let new: Vec<_> = out.value.iter().filter(|d| d.stage == DescriptionStage::Extended).collect();
        assert_eq!(new.len(), 2);
        assert!(new.iter().all(|d| d.origin_step == Some(2)));
    }

    #[test]
    fn extension_fixed_point_and_failures() {
        let originals = vec![ApiDescription::new("p1", "Read lines.", DescriptionStage::Predicted)];
        let out = extend_api_descriptions(&originals, &scripted(vec!["- none"]), &PipelineSettings::default());
        assert_eq!((out.value.len(), out.degraded), (1, false));
        let out = extend_api_descriptions(&originals, &scripted(vec!["cannot help"]), &PipelineSettings::default());
        assert_eq!((out.value.len(), out.degraded), (1, true));
        let gw = scripted(vec![]);
        assert!(extend_api_descriptions(&[], &gw, &PipelineSettings::default()).value.is_empty());
        assert_eq!(gw.counters().provider_calls, 0);
    }
}
