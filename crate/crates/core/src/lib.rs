//! Answers ambiguous open-domain questions by building a pruned tree of
//! disambiguated question/answer pairs over retrieved passages, then writing one
//! long-form answer that covers every retained interpretation.
//!
//! The flow for one question is: [`corpus`] retrieval, [`rank`] reranking and
//! exemplar selection, [`tree`] construction through the [`llm`] gateway with the
//! [`prompts`] templates, then [`answer`] generation. [`metrics`] and [`harness`]
//! cover evaluation and batch runs.

pub mod answer;
pub mod config;
pub mod corpus;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod rank;
pub mod text;
pub mod tree;

pub use config::PipelineConfig;
