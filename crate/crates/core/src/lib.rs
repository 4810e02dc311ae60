//! Retrieval-augmented, repository-level code generation.
//!
//! `repogen` indexes a Python repository, asks an LLM to describe every API it
//! finds, decomposes a generation query into implementation steps and predicted
//! API descriptions, retrieves the closest repository APIs by cosine
//! similarity, and assembles a prompt of the form `[apis, context, query]`.
//!
//! The same machinery drives an information-source study: eight prompt
//! conditions built from {context, similar code, oracle APIs}, plus an
//! evaluation harness that runs generated candidates against the task's unit
//! tests in a throwaway checkout and reports Pass@k, intersection, containment,
//! API-count and recall analyses.
//!
//! The modules map onto the stages of that flow:
//!
//! - [`corpus`]: repository scanning, API extraction, context and code windows,
//!   invoked-API resolution, benchmark task loading.
//! - [`gateway`]: chat-completion client with record/replay cache, prompt
//!   templates, code extraction from completions.
//! - [`retrieval`]: embedding providers, exact cosine index, API and
//!   similar-code retrieval.
//! - [`pipeline`]: the condition matrix, query decomposition and prompt
//!   assembly.
//! - [`eval`]: sandboxed execution, Pass@k and the analysis reports.
//! - [`config`], [`run`] and [`commands`]: configuration, run directories and
//!   the command implementations behind the `repogen` binary.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod jsonl;
pub mod pipeline;
pub mod retrieval;
pub mod run;

pub use config::RunConfig;
pub use corpus::{ApiId, ApiUnit, Corpus, GenerationTask, SourceFile, Span};
pub use gateway::{ChatRequest, CompletionResult, Gateway, Mode, StageTag};
pub use pipeline::{Condition, ConditionName, GenerationRecord};
pub use retrieval::{EmbeddingProvider, HashProjection, SourceMode, Vector, VectorIndex};
