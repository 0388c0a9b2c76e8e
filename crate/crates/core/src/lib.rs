//! Medical claim detection, PIO tagging, pseudo-supervision generation and
//! dense evidence retrieval for social-media health posts.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`corpus`]: data model, JSONL ingestion, annotation aggregation,
//!   agreement statistics, splits and a synthetic corpus generator.
//! * [`tagger`]: linear-chain CRF taggers for claim/experience/question
//!   spans and for PIO elements inside claims.
//! * [`pseudogen`]: templated substitution of PIO spans with elements of
//!   evidence abstracts, producing (pseudo context, positive abstract) pairs.
//! * [`retriever`]: hashed n-gram dual encoder trained with in-batch
//!   negatives, exact top-k search, BM25 and random baselines, ranking
//!   metrics and expert-judgment aggregation.

pub mod corpus;
pub mod hashing;
pub mod pseudogen;
pub mod retriever;
pub mod tagger;

/// Reserved separator token. The tokenizer never emits it because its
/// bracket characters are split off as punctuation.
pub const SEP: &str = "⟦SEP⟧";
