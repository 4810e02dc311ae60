//! Prompt templates for every LLM-facing stage.
//!
//! Slots are written `{name}`. Each template carries a version string that
//! participates in the cache key, so editing a template's text must bump it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Message, StageTag};

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing slot: {0}")]
    MissingSlot(String),
    #[error("example {example_id} is tagged {found} but spliced into a {expected} template")]
    ExampleStage { example_id: String, expected: StageTag, found: StageTag },
}

/// An in-context example spliced into a stage template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub example_id: String,
    pub stage_tag: StageTag,
    pub body: String,
}

struct Template {
    version: &'static str,
    system: Option<&'static str>,
    user: &'static str,
}

fn template(stage: StageTag) -> Template {
    match stage {
        StageTag::ApiDescribe => Template {
            version: "api_describe@1",
            system: None,
            user: "Describe what the following Python function from a repository does. \
Write one or two plain sentences about its functionality rather than its implementation, \
and do not repeat its name.\n\n\
Function: {qualified_name}\nSignature: {signature}\nDocstring: {doc}\n\n\
Source:\n```python\n{body}\n```\n\nDescription:",
        },
        StageTag::Steps => Template {
            version: "steps@1",
            system: Some("You are a senior Python developer who plans an implementation before writing it."),
            user: "Decompose the programming task into a short numbered list of concrete implementation steps. \
Reply with the numbered list only.\n\n{examples}\n\nTask:\n{query}\n\nSteps:",
        },
        StageTag::ApiDescs => Template {
            version: "api_descs@1",
            system: Some(
                "You are a senior Python developer who knows how repositories split work into reusable functions.",
            ),
            user:
                "For each implementation step, describe the repository functions that could be called to carry it out. \
Describe each function's functionality in one sentence without guessing its name. \
Group the descriptions under `Step N:` headers as bullet points, and write `- none` for a step \
that needs no repository function.\n\n{examples}\n\nImplementation steps:\n{steps}\n\nFunction descriptions:",
        },
        StageTag::Extend => Template {
            version: "extend@1",
            system: None,
            user: "Some of the function descriptions below may describe several functionalities at once. \
Split every composite description into atomic descriptions that each cover a single functionality. \
Reply with the new atomic descriptions only, one bullet per line, each prefixed with the number of the \
description it refines, like `- [2] ...`. Reply `- none` when every description is already atomic.\n\n\
Function descriptions:\n{descriptions}\n\nAtomic descriptions:",
        },
        StageTag::Generate => Template {
            version: "generate@1",
            system: Some("You are a senior Python developer completing a function inside an existing repository."),
            user: "{prompt}\n\nWrite the complete implementation of the target function. \
Return only the function definition in a single ```python code block.",
        },
    }
}

pub fn template_version(stage: StageTag) -> &'static str {
    template(stage).version
}

fn fill(text: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let slot_len =
            after.find('}').filter(|&end| end > 0 && after[..end].chars().all(|c| c.is_ascii_lowercase() || c == '_'));
        match slot_len {
            Some(end) => {
                let name = &after[..end];
                let value = bindings.get(name).ok_or_else(|| TemplateError::MissingSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders `stage`'s template. When the template has an `{examples}` slot it
/// is filled from `examples`, sorted by `example_id`.
pub fn render_template(
    stage: StageTag,
    bindings: &Bindings,
    examples: &[PromptExample],
) -> Result<Vec<Message>, TemplateError> {
    let tpl = template(stage);
    let mut sorted: Vec<&PromptExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    if let Some(bad) = sorted.iter().find(|e| e.stage_tag != stage) {
        return Err(TemplateError::ExampleStage {
            example_id: bad.example_id.clone(),
            expected: stage,
            found: bad.stage_tag,
        });
    }
    let mut bindings = bindings.clone();
    if tpl.user.contains("{examples}") {
        let block = sorted
            .iter()
            .enumerate()
            .map(|(i, e)| format!("Example {}:\n{}", i + 1, e.body.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n");
        bindings.insert("examples".into(), block);
    }
    let mut messages = Vec::new();
    if let Some(system) = tpl.system {
        messages.push(Message::system(fill(system, &bindings)?));
    }
    messages.push(Message::user(fill(tpl.user, &bindings)?));
    Ok(messages)
}

/// Bundled in-context examples: two each for step decomposition and API
/// description prediction.
pub fn default_examples(stage: StageTag) -> Vec<PromptExample> {
    let bodies: &[(&str, &str)] = match stage {
        StageTag::Steps => &[
            (
                "steps-01",
                "Task:\nReturn the number of words in the text file at `path`.\nSignature: def count_words(path)\n\n\
Steps:\n1. Read the contents of the file at `path`.\n2. Split the contents on whitespace into words.\n3. Return the number of words.",
            ),
            (
                "steps-02",
                "Task:\nRegister a user with `name` and `email`, rejecting duplicate emails, and return the new user's id.\n\
Signature: def register_user(self, name, email)\n\n\
Steps:\n1. Check that `email` is well formed.\n2. Look up an existing user with the same email and raise an error if one exists.\n\
3. Create the user record and save it to the store.\n4. Return the id of the saved user.",
            ),
        ],
        StageTag::ApiDescs => &[
            (
                "api_descs-01",
                "Implementation steps:\n1. Read the contents of the file at `path`.\n2. Split the contents on whitespace into words.\n\
3. Return the number of words.\n\nFunction descriptions:\nStep 1:\n- Read the whole text content of a file given its path.\n\
Step 2:\n- Split a text into a list of words.\nStep 3:\n- none",
            ),
            (
                "api_descs-02",
                "Implementation steps:\n1. Check that `email` is well formed.\n2. Look up an existing user with the same email and raise an error if one exists.\n\
3. Create the user record and save it to the store.\n4. Return the id of the saved user.\n\n\
Function descriptions:\nStep 1:\n- Validate the format of an email address.\nStep 2:\n- Find a stored user by email address.\n\
Step 3:\n- Create a new user record from a name and an email.\n- Save a record to the persistent store and assign it an id.\nStep 4:\n- none",
            ),
        ],
        _ => &[],
    };
    bodies
        .iter()
        .map(|(id, body)| PromptExample { example_id: id.to_string(), stage_tag: stage, body: body.to_string() })
        .collect()
}
