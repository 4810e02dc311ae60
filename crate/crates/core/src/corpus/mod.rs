//! Repository ingestion: source files, API units, per-task context, code
//! windows, invoked-API resolution and containment labels.

mod context;
mod invoked;
mod python;
mod tasks;
mod windows;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

pub use context::{classify_containment, extract_context, Containment, ContainmentClass};
pub use invoked::{extract_invoked_apis, InvokedApis, ResolutionScope};
pub use python::{check_syntax, count_top_level_definitions, dedent, extract_api_units, module_name};
pub use tasks::{load_benchmark, GenerationTask, TargetLocation};
pub use windows::{chunk_windows, CodeWindow};

pub const DEFAULT_INCLUDE: &[&str] = &["**/*.py"];
pub const DEFAULT_EXCLUDE: &[&str] = &["tests/**", "**/tests/**", "**/test_*.py", "**/__pycache__/**"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read repository root {path}: {source}")]
    UnreadableRoot { path: PathBuf, source: io::Error },
    #[error("invalid glob pattern `{pattern}`: {message}")]
    Glob { pattern: String, message: String },
    #[error("failed to parse {path}: {diagnostic}")]
    Parse { path: String, diagnostic: String },
    #[error("file not in corpus: {0}")]
    MissingFile(String),
    #[error("invalid span {start}..={end} for {path}")]
    InvalidSpan { path: String, start: usize, end: usize },
    #[error("invalid window parameters: window_size={window_size}, stride={stride}")]
    InvalidWindow { window_size: usize, stride: usize },
    #[error("task {task}: {message}")]
    Task { task: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
    pub line_count: usize,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let line_count = text.lines().count();
        SourceFile { path: path.into(), text, line_count }
    }

    /// Lines `span.start..=span.end`, each with its original terminator.
    pub fn slice_lines(&self, span: Span) -> Option<String> {
        if span.start == 0 || span.start > span.end || span.end > self.line_count {
            return None;
        }
        Some(self.text.split_inclusive('\n').skip(span.start - 1).take(span.end - span.start + 1).collect())
    }
}

/// Stable identifier of an [`ApiUnit`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApiId(pub String);

impl ApiId {
    pub fn derive(path: &str, qualified_name: &str, signature: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(path.as_bytes());
        hasher.update(b"\n");
        hasher.update(qualified_name.as_bytes());
        hasher.update(b"\n");
        hasher.update(signature.as_bytes());
        ApiId(hex::encode(&hasher.finalize()[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ApiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One callable extracted from the repository: a top-level function or a
/// class method (constructors included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiUnit {
    pub id: ApiId,
    pub qualified_name: String,
    pub signature: String,
    pub doc: Option<String>,
    pub body: String,
    pub path: String,
    pub span: Span,
}

impl ApiUnit {
    /// Last dotted segment of the qualified name.
    pub fn name(&self) -> &str {
        self.qualified_name.rsplit('.').next().unwrap_or(&self.qualified_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub files: Vec<SourceFile>,
    pub warnings: Vec<Diagnostic>,
}

fn build_globset(patterns: &[String]) -> Result<GlobSet, CorpusError> {
    let mut builder = GlobSetBuilder::new();
    for pattern in patterns {
        let glob = Glob::new(pattern)
            .map_err(|err| CorpusError::Glob { pattern: pattern.clone(), message: err.to_string() })?;
        builder.add(glob);
    }
    builder.build().map_err(|err| CorpusError::Glob { pattern: patterns.join(","), message: err.to_string() })
}

/// Walks `root` and returns every included, non-excluded, non-empty UTF-8
/// file sorted by repository-relative path.
pub fn scan_repository(root: &Path, include: &[String], exclude: &[String]) -> Result<CorpusManifest, CorpusError> {
    let meta = fs::metadata(root).map_err(|source| CorpusError::UnreadableRoot { path: root.to_path_buf(), source })?;
    if !meta.is_dir() {
        return Err(CorpusError::UnreadableRoot {
            path: root.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotADirectory, "not a directory"),
        });
    }
    let include = build_globset(include)?;
    let exclude = build_globset(exclude)?;

    let mut manifest = CorpusManifest::default();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry =
            entry.map_err(|err| CorpusError::UnreadableRoot { path: root.to_path_buf(), source: err.into() })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative_path(root, entry.path());
        if !include.is_match(&rel) || exclude.is_match(&rel) {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        match String::from_utf8(bytes) {
            Ok(text) if text.trim().is_empty() => {}
            Ok(text) => manifest.files.push(SourceFile::new(rel, text)),
            Err(_) => manifest.warnings.push(Diagnostic { path: rel, message: "not valid UTF-8; skipped".into() }),
        }
    }
    manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(manifest)
}

fn relative_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

/// SHA-256 over every file under `root` (paths and contents, sorted).
pub fn tree_hash(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(io::Error::from)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative_path(root, entry.path());
        let bytes = fs::read(entry.path())?;
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// A scanned repository with its extracted API table.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub root: PathBuf,
    pub files: Vec<SourceFile>,
    pub units: Vec<ApiUnit>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Corpus {
    /// Extracts API units from every manifest file. Files that fail to parse
    /// are recorded as diagnostics and contribute no units.
    pub fn build(root: impl Into<PathBuf>, manifest: CorpusManifest) -> Self {
        let mut diagnostics = manifest.warnings;
        let mut units = Vec::new();
        for file in &manifest.files {
            match extract_api_units(file) {
                Ok(found) => units.extend(found),
                Err(err) => diagnostics.push(Diagnostic { path: file.path.clone(), message: err.to_string() }),
            }
        }
        units.sort_by(|a, b| (&a.path, a.span.start).cmp(&(&b.path, b.span.start)));
        Corpus { root: root.into(), files: manifest.files, units, diagnostics }
    }

    pub fn load(root: &Path, include: &[String], exclude: &[String]) -> Result<Self, CorpusError> {
        let manifest = scan_repository(root, include, exclude)?;
        Ok(Self::build(root, manifest))
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.binary_search_by(|f| f.path.as_str().cmp(path)).ok().map(|idx| &self.files[idx])
    }

    pub fn unit(&self, id: &ApiId) -> Option<&ApiUnit> {
        self.units.iter().find(|u| &u.id == id)
    }

    pub fn unit_at(&self, path: &str, span: Span) -> Option<&ApiUnit> {
        self.units.iter().find(|u| u.path == path && u.span == span)
    }

    pub fn unit_map(&self) -> BTreeMap<&ApiId, &ApiUnit> {
        self.units.iter().map(|u| (&u.id, u)).collect()
    }

    /// Sliding code windows over every file, in path order.
    pub fn windows(&self, window_size: usize, stride: usize) -> Result<Vec<CodeWindow>, CorpusError> {
        let mut all = Vec::new();
        for file in &self.files {
            all.extend(chunk_windows(file, window_size, stride)?);
        }
        Ok(all)
    }

    pub fn write_tables(&self, dir: &Path) -> io::Result<()> {
        crate::jsonl::write_all(&dir.join("corpus.jsonl"), &self.files)?;
        crate::jsonl::write_all(&dir.join("apis.jsonl"), &self.units)?;
        crate::jsonl::write_all(&dir.join("diagnostics.jsonl"), &self.diagnostics)
    }

    pub fn read_tables(root: &Path, dir: &Path) -> io::Result<Self> {
        Ok(Corpus {
            root: root.to_path_buf(),
            files: crate::jsonl::read_all(&dir.join("corpus.jsonl"))?,
            units: crate::jsonl::read_all(&dir.join("apis.jsonl"))?,
            diagnostics: crate::jsonl::read_or_empty(&dir.join("diagnostics.jsonl"))?,
        })
    }
}
