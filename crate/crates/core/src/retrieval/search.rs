use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{RetrievalError, Vector, VectorIndex};
use crate::corpus::{ApiId, CodeWindow, Span};

/// The API matched to one predicted description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub description_id: String,
    pub api_id: ApiId,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiRetrievalSet {
    /// One hit per description that matched anything, in description order.
    pub hits: Vec<RetrievalHit>,
}

impl ApiRetrievalSet {
    /// Distinct retrieved APIs, first occurrence order.
    pub fn unique_apis(&self) -> Vec<ApiId> {
        let mut seen = BTreeSet::new();
        self.hits.iter().filter(|h| seen.insert(h.api_id.clone())).map(|h| h.api_id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Top-1 API for every description vector. Ids in `exclude` (the unit being
/// generated) are never returned.
pub fn retrieve_apis<'a>(
    descriptions: impl IntoIterator<Item = (&'a str, &'a Vector)>,
    index: &VectorIndex,
    exclude: &BTreeSet<ApiId>,
) -> Result<ApiRetrievalSet, RetrievalError> {
    let mut hits = Vec::new();
    for (description_id, vector) in descriptions {
        let best = index.top_k_filtered(vector, 1, |id| !exclude.iter().any(|e| e.as_str() == id))?;
        if let Some(top) = best.into_iter().next() {
            hits.push(RetrievalHit {
                description_id: description_id.to_string(),
                api_id: ApiId(top.id),
                score: top.score,
            });
        }
    }
    Ok(ApiRetrievalSet { hits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarWindow {
    pub window: CodeWindow,
    pub score: f64,
}

/// Top-`k` code windows similar to `key`, skipping any window that overlaps
/// the target span so the answer cannot leak into the prompt.
pub fn retrieve_similar(
    key: &Vector,
    index: &VectorIndex,
    windows: &[CodeWindow],
    target: Option<(&str, Span)>,
    k: usize,
) -> Result<Vec<SimilarWindow>, RetrievalError> {
    let by_id: BTreeMap<String, &CodeWindow> = windows.iter().map(|w| (w.id(), w)).collect();
    let leaks = |id: &str| match (target, by_id.get(id)) {
        (Some((path, span)), Some(w)) => w.path == path && w.span().overlaps(&span),
        _ => false,
    };
    let ranked = index.top_k_filtered(key, k, |id| by_id.contains_key(id) && !leaks(id))?;
    Ok(ranked.into_iter().map(|s| SimilarWindow { window: by_id[&s.id].clone(), score: s.score }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_windows, SourceFile};
    use crate::retrieval::{embed, HashProjection, SourceMode};

    fn index_of(items: &[(&str, &str)]) -> VectorIndex {
        let items: Vec<(String, String)> = items.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
        VectorIndex::build(&items, &HashProjection::default(), SourceMode::TextDescription).unwrap()
    }

    #[test]
    fn top_one_per_description_with_dedup_and_exclusion() {
        let index = index_of(&[
            ("aa", "read every line of a text file"),
            ("bb", "parse configuration entries from lines"),
            ("cc", "load settings from a configuration file"),
        ]);
        let p = HashProjection::default();
        let d1 = embed("read lines of a file", &p).unwrap();
        let d2 = embed("parse configuration entries", &p).unwrap();
        let d3 = embed("read the text lines of the file", &p).unwrap();
        let d4 = embed("load settings configuration file", &p).unwrap();
        let set = retrieve_apis(
            [("d1", &d1), ("d2", &d2), ("d3", &d3), ("d4", &d4)],
            &index,
            &BTreeSet::from([ApiId("cc".into())]),
        )
        .unwrap();
        let got: Vec<_> = set.hits.iter().map(|h| (h.description_id.as_str(), h.api_id.as_str())).collect();
        assert_eq!(got[..3], [("d1", "aa"), ("d2", "bb"), ("d3", "aa")]);
        assert_ne!(got[3].1, "cc");
        assert_eq!(set.unique_apis().len(), 2);
    }

    #[test]
    fn empty_descriptions_give_empty_set() {
        let index = index_of(&[("aa", "read lines")]);
        assert!(retrieve_apis(std::iter::empty(), &index, &BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn similar_windows_skip_target_overlap() {
        let text: String = (1..=40).map(|i| format!("value_{i} = compute_total(rows)\n")).collect();
        let file = SourceFile::new("pkg/m.py", text);
        let windows = chunk_windows(&file, 10, 5).unwrap();
        let items: Vec<(String, String)> = windows.iter().map(|w| (w.id(), w.text.clone())).collect();
        let index = VectorIndex::build(&items, &HashProjection::default(), SourceMode::RawCode).unwrap();
        let key = embed("compute_total rows", &HashProjection::default()).unwrap();
        let target = Span::new(12, 18);
        let got = retrieve_similar(&key, &index, &windows, Some(("pkg/m.py", target)), 20).unwrap();
        assert!(!got.is_empty());
        for s in &got {
            assert!(!s.window.span().overlaps(&target), "{}", s.window.id());
        }
        let overlapping = windows.iter().filter(|w| w.span().overlaps(&target)).count();
        assert_eq!(got.len(), windows.len() - overlapping);
        let other_file = retrieve_similar(&key, &index, &windows, Some(("pkg/other.py", target)), 20).unwrap();
        assert_eq!(other_file.len(), windows.len());
    }
}
