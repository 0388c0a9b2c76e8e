//! Corpus data model: posts, token-indexed span annotations, evidence
//! abstracts and relevance judgments, plus the operations that work on them.

mod agreement;
mod io;
mod split;
mod stats;
mod synth;
mod tokenize;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{aggregate_labels, fleiss_kappa, identify_pure_claims, label_kappa, token_prf, Prf, PrfCounts};
pub use io::{
    load_annotations, load_evidence, load_judgments, load_posts, parse_annotations, parse_evidence, parse_judgments,
    parse_posts, save_annotations, save_evidence, save_judgments, save_posts, write_annotations, write_evidence,
    write_judgments, write_posts,
};
pub use split::{split_corpus, CorpusSplit, DEFAULT_RATIOS};
pub use stats::{corpus_stats, CorpusStats, PopulationStats};
pub use synth::{synth_corpus, GoldPair, PlantedCounts, SynthConfig, SynthCorpus};
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("post {post_id}: {message}")]
    InvalidSpan { post_id: String, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown post `{post_id}`")]
    UnknownPost { line: usize, post_id: String },
    #[error("annotation sets reference different posts (`{0}` and `{1}`)")]
    MixedPosts(String, String),
    #[error("aggregation needs at least 2 annotation sets, got {0}")]
    TooFewAnnotators(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("invalid rating matrix: {0}")]
    InvalidRatings(String),
    #[error("degenerate distribution")]
    DegenerateDistribution,
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A token with byte offsets into the post text (`text == post[char_start..char_end]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// A tokenized post. Tokens are always derived from `text` with [`tokenize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub id: String,
    pub population: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Post {
    pub fn new(id: impl Into<String>, population: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self {
            id: id.into(),
            population: population.into(),
            text,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Source text covered by tokens `start..end`, including inner whitespace.
    pub fn span_text(&self, start: usize, end: usize) -> &str {
        if start >= end {
            return "";
        }
        &self.text[self.tokens[start].char_start..self.tokens[end - 1].char_end]
    }

    pub fn byte_range(&self, span: &Span) -> (usize, usize) {
        (
            self.tokens[span.token_start].char_start,
            self.tokens[span.token_end - 1].char_end,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpanLabel {
    Claim,
    Experience,
    Question,
    #[serde(rename = "POP")]
    Pop,
    #[serde(rename = "INT")]
    Int,
    #[serde(rename = "OUT")]
    Out,
}

impl SpanLabel {
    pub const ALL: [SpanLabel; 6] = [
        SpanLabel::Claim,
        SpanLabel::Experience,
        SpanLabel::Question,
        SpanLabel::Pop,
        SpanLabel::Int,
        SpanLabel::Out,
    ];
    pub const STAGE1: [SpanLabel; 3] = [SpanLabel::Claim, SpanLabel::Experience, SpanLabel::Question];
    pub const PIO: [SpanLabel; 3] = [SpanLabel::Pop, SpanLabel::Int, SpanLabel::Out];

    pub fn as_str(self) -> &'static str {
        match self {
            SpanLabel::Claim => "Claim",
            SpanLabel::Experience => "Experience",
            SpanLabel::Question => "Question",
            SpanLabel::Pop => "POP",
            SpanLabel::Int => "INT",
            SpanLabel::Out => "OUT",
        }
    }

    pub fn is_pio(self) -> bool {
        matches!(self, SpanLabel::Pop | SpanLabel::Int | SpanLabel::Out)
    }
}

impl fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open token range `[token_start, token_end)` carrying one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub label: SpanLabel,
    pub token_start: usize,
    pub token_end: usize,
}

impl Span {
    pub fn new(label: SpanLabel, token_start: usize, token_end: usize) -> Self {
        Self {
            label,
            token_start,
            token_end,
        }
    }

    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end <= self.token_start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.token_start < other.token_end && other.token_start < self.token_end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.token_start <= other.token_start && other.token_end <= self.token_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub post_id: String,
    pub annotator_id: String,
    pub spans: Vec<Span>,
}

impl AnnotationSet {
    pub fn new(post_id: impl Into<String>, annotator_id: impl Into<String>, spans: Vec<Span>) -> Self {
        Self {
            post_id: post_id.into(),
            annotator_id: annotator_id.into(),
            spans,
        }
    }

    pub fn spans_with(&self, label: SpanLabel) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(move |s| s.label == label)
    }

    /// PIO spans lying inside `claim`.
    pub fn pio_within<'a>(&'a self, claim: &'a Span) -> impl Iterator<Item = &'a Span> {
        self.spans.iter().filter(move |s| s.label.is_pio() && claim.contains(s))
    }

    /// Checks index ranges against a post of `n_tokens` tokens and per-label
    /// non-overlap.
    pub fn validate(&self, n_tokens: usize) -> Result<()> {
        for s in &self.spans {
            if s.token_start >= s.token_end || s.token_end > n_tokens {
                return Err(CorpusError::InvalidSpan {
                    post_id: self.post_id.clone(),
                    message: format!(
                        "{} span ({}, {}) out of range for {} tokens",
                        s.label, s.token_start, s.token_end, n_tokens
                    ),
                });
            }
        }
        for label in SpanLabel::ALL {
            let mut spans: Vec<&Span> = self.spans_with(label).collect();
            spans.sort();
            for w in spans.windows(2) {
                if w[0].overlaps(w[1]) {
                    return Err(CorpusError::InvalidSpan {
                        post_id: self.post_id.clone(),
                        message: format!(
                            "overlapping {} spans ({}, {}) and ({}, {})",
                            label, w[0].token_start, w[0].token_end, w[1].token_start, w[1].token_end
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrevalenceClass {
    VeryCommon,
    Common,
    Rare,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationInfo {
    pub name: String,
    pub prevalence_class: PrevalenceClass,
}

/// A trusted-evidence record with its extracted PIO elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAbstract {
    pub id: String,
    pub title: String,
    pub text: String,
    pub populations: Vec<String>,
    pub interventions: Vec<String>,
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub population_tag: Option<String>,
}

impl EvidenceAbstract {
    pub fn elements(&self, kind: SpanLabel) -> &[String] {
        match kind {
            SpanLabel::Pop => &self.populations,
            SpanLabel::Int => &self.interventions,
            SpanLabel::Out => &self.outcomes,
            _ => &[],
        }
    }

    /// Text indexed by the retrievers: title and abstract body as two
    /// separator-delimited segments.
    pub fn document_text(&self) -> String {
        format!("{}{}{}", self.title, crate::SEP, self.text)
    }
}

/// Three-level relevance grade; serialized as the integers 3, 2, 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Grade {
    Irrelevant = 1,
    SomewhatRelevant = 2,
    Relevant = 3,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::Relevant, Grade::SomewhatRelevant, Grade::Irrelevant];
}

impl TryFrom<u8> for Grade {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Grade::Irrelevant),
            2 => Ok(Grade::SomewhatRelevant),
            3 => Ok(Grade::Relevant),
            other => Err(format!("grade must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub claim_id: String,
    pub abstract_id: String,
    pub rater_id: String,
    pub grade: Grade,
}
