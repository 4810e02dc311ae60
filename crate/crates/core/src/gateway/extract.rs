//! Pulling a single function definition out of a model completion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::count_top_level_definitions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    FencedBlock,
    HeuristicDefScan,
    WholeCompletion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub source: String,
    pub extraction_method: ExtractionMethod,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("no function definition could be extracted from the completion")]
pub struct CandidateUnparsable;

/// Extracts the candidate definition from `completion`.
///
/// The first fenced block containing a definition wins; otherwise the first
/// `def` (with its decorators) is scanned through its indented body. When
/// that region is the entire completion the method is `WholeCompletion`.
/// The result is dedented, ends with a newline and must parse as exactly one
/// top-level definition.
pub fn extract_code(completion: &str) -> Result<CodeCandidate, CandidateUnparsable> {
    for block in fenced_blocks(completion) {
        if let Some(region) = scan_definition(&block) {
            return finish(region, ExtractionMethod::FencedBlock);
        }
    }
    let region = scan_definition(completion).ok_or(CandidateUnparsable)?;
    let method = if region.trim() == completion.trim() {
        ExtractionMethod::WholeCompletion
    } else {
        ExtractionMethod::HeuristicDefScan
    };
    finish(region, method)
}

fn finish(region: String, method: ExtractionMethod) -> Result<CodeCandidate, CandidateUnparsable> {
    if count_top_level_definitions(&region) != Some(1) {
        return Err(CandidateUnparsable);
    }
    Ok(CodeCandidate { source: region, extraction_method: method })
}

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None if trimmed.starts_with("```") => current = Some(Vec::new()),
            None => {}
            Some(_) if trimmed.starts_with("```") => {
                let lines = current.take().unwrap_or_default();
                blocks.push(lines.join("\n"));
            }
            Some(lines) => lines.push(line),
        }
    }
    blocks
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

fn is_def_line(trimmed: &str) -> bool {
    trimmed.starts_with("def ") || trimmed.starts_with("async def ")
}

/// Net change in bracket depth over a line, ignoring brackets inside simple
/// string literals and comments.
fn bracket_delta(line: &str) -> i32 {
    let mut depth = 0;
    let mut quote: Option<char> = None;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                if c == '\\' {
                    chars.next();
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '#' => break,
                '"' | '\'' => quote = Some(c),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                _ => {}
            },
        }
    }
    depth
}

fn triple_quotes(line: &str) -> usize {
    line.matches("\"\"\"").count() + line.matches("'''").count()
}

fn scan_definition(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let def_idx = lines.iter().position(|l| is_def_line(l.trim_start()))?;
    let base = indent_of(lines[def_idx]);

    let mut start = def_idx;
    while start > 0 {
        let prev = lines[start - 1];
        if prev.trim_start().starts_with('@') && indent_of(prev) == base {
            start -= 1;
        } else {
            break;
        }
    }

    // Header: through the line that closes the signature.
    let mut depth = 0;
    let mut end = def_idx;
    loop {
        depth += bracket_delta(lines[end]);
        if depth <= 0 || end + 1 >= lines.len() {
            break;
        }
        end += 1;
    }

    let header_is_one_liner = {
        let header = lines[end].trim_end();
        !header.ends_with(':') && header.contains(':')
    };
    if !header_is_one_liner {
        let mut in_string = false;
        let mut depth = 0;
        let mut last_body = end;
        for (idx, line) in lines.iter().enumerate().skip(end + 1) {
            let blank = line.trim().is_empty();
            if !in_string && depth <= 0 && !blank && indent_of(line) <= base {
                break;
            }
            if triple_quotes(line) % 2 == 1 {
                in_string = !in_string;
            }
            if !in_string {
                depth += bracket_delta(line);
            }
            if !blank {
                last_body = idx;
            }
        }
        end = last_body;
    }
    if end == def_idx && !header_is_one_liner && !lines[end].trim_end().ends_with(':') {
        return None;
    }

    let mut out = String::new();
    for line in &lines[start..=end] {
        if line.trim().is_empty() {
            out.push('\n');
        } else {
            out.push_str(&line[base.min(indent_of(line))..]);
            out.push('\n');
        }
    }
    Some(out)
}
