use serde::{Deserialize, Serialize};

use super::{ApiUnit, Corpus, CorpusError, Span};

/// Returns every line of `path` that precedes `span.start`, verbatim.
pub fn extract_context(corpus: &Corpus, path: &str, span: Span) -> Result<String, CorpusError> {
    let file = corpus.file(path).ok_or_else(|| CorpusError::MissingFile(path.to_string()))?;
    if span.start == 0 || span.start > span.end || span.end > file.line_count {
        return Err(CorpusError::InvalidSpan { path: path.to_string(), start: span.start, end: span.end });
    }
    Ok(file.text.split_inclusive('\n').take(span.start - 1).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContainmentClass {
    FullyContained,
    PartiallyContained,
    NotIncluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Containment {
    pub class: ContainmentClass,
    /// Set when the oracle set is empty; such tasks are left out of the
    /// containment report.
    pub vacuous: bool,
}

/// Labels how many of `oracle` have their definition text inside `context`.
pub fn classify_containment<'a>(context: &str, oracle: impl IntoIterator<Item = &'a ApiUnit>) -> Containment {
    let mut total = 0usize;
    let mut inside = 0usize;
    for unit in oracle {
        total += 1;
        if context.contains(unit.body.trim_end()) {
            inside += 1;
        }
    }
    let class = if inside == total {
        ContainmentClass::FullyContained
    } else if inside == 0 {
        ContainmentClass::NotIncluded
    } else {
        ContainmentClass::PartiallyContained
    };
    Containment { class, vacuous: total == 0 }
}

/// Oracle units whose definition appears in `context`.
pub(crate) fn contained<'a>(context: &str, oracle: impl IntoIterator<Item = &'a ApiUnit>) -> Vec<&'a ApiUnit> {
    oracle.into_iter().filter(|u| context.contains(u.body.trim_end())).collect()
}
