use std::path::PathBuf;

use crate::corpus::Violation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed document line: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("document {doc_id} failed validation: {}", format_violations(.violations))]
    Validation {
        doc_id: String,
        violations: Vec<Violation>,
    },

    #[error("duplicate doc_id {doc_id}")]
    DuplicateDocId { doc_id: String },

    #[error("unknown mention id {id} in document {doc_id}")]
    UnknownMention { doc_id: String, id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible synthetic-corpus config: {0}")]
    InfeasibleConfig(String),

    #[error("majority vote requires at least one annotation")]
    EmptyVote,

    #[error("annotations mix anaphors {first} and {second}")]
    MixedVote { first: String, second: String },

    #[error("corpus {aux} contains doc_id {doc_id} absent from gold corpus {gold}")]
    DocIdMismatch {
        aux: String,
        gold: String,
        doc_id: String,
    },

    #[error("anaphor {anaphor} in {doc_id} has fewer than two cluster-distinct candidates")]
    TooFewCandidates { doc_id: String, anaphor: String },

    #[error("prediction set for {doc_id} is missing gold anaphor {anaphor}")]
    MissingPrediction { doc_id: String, anaphor: String },

    #[error("predicted anaphor {anaphor} in {doc_id} is not a gold split anaphor")]
    UnknownAnaphor { doc_id: String, anaphor: String },

    #[error("embedding dimension mismatch for {what}: declared {declared}, found {found}")]
    DimensionMismatch {
        what: String,
        declared: usize,
        found: usize,
    },

    #[error("contextual embeddings missing for {what}")]
    MissingEmbedding { what: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: u64 },

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
