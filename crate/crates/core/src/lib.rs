//! Unrestricted split-antecedent anaphora resolution.
//!
//! A plural anaphor such as *they* in "John met Mary. They went to the
//! movies." refers to the union of two antecedents introduced by separate
//! noun phrases. This crate resolves such anaphors, assuming gold mentions
//! and gold anaphors are given:
//!
//! - [`corpus`]: the document model, a JSONL interchange format, candidate
//!   windows, gold-cluster anaphor extension, and a synthetic-corpus
//!   generator for testing.
//! - [`auxiliary`]: builders for the four auxiliary training corpora
//!   (silver labels, majority-voted raw crowd annotations, element-of
//!   bridging links, single-antecedent coreference) and a link-level
//!   quality report against gold.
//! - [`encoder`] / [`scorer`] / [`model`]: a pairwise neural ranker.
//!   Tokens are embedded (trainable lookup, character convolution, or
//!   precomputed vectors), contextualized by a BiLSTM, and pooled into
//!   mention representations with attention heads; mention pairs are
//!   scored by a feed-forward network with a dummy antecedent absorbing
//!   probability mass during training; test-time selection returns two to
//!   five cluster-distinct antecedents per anaphor.
//! - [`train`]: the optimization loop with three corpus-mixing strategies
//!   (concatenation, pre-training, annealing) plus stage chaining,
//!   checkpointing, and a reproducible training log.
//! - [`eval`]: lenient link-level and strict set-level evaluation,
//!   per-antecedent-count breakdowns, and the recent-m / random baselines.
//!
//! All randomness is seeded ChaCha8; identical seeds give identical
//! corpora, training logs, and predictions.

pub mod auxiliary;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod nn;
pub mod scorer;
pub mod train;

mod error;

pub use error::{Error, Result};
