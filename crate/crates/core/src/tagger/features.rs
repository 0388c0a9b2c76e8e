//! Token features for the CRF taggers and a rule-based coarse POS tagger.

use std::fmt;

use crate::hashing::hash_str;

use super::{Result, TaggerError};

pub const DEFAULT_UNITS: &[&str] = &["mg", "mcg", "g", "ml", "iu", "bpm", "%", "kg", "lb", "hrs", "mmol"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    NounLike,
    VerbLike,
    Num,
    Punct,
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::NounLike => "NOUNLIKE",
            PosTag::VerbLike => "VERBLIKE",
            PosTag::Num => "NUM",
            PosTag::Punct => "PUNCT",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source of part-of-speech tags for feature extraction.
pub trait PosTagger {
    fn tag(&self, tokens: &[&str]) -> Vec<PosTag>;
}

const VERB_WORDS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "am", "have", "has", "had", "do", "does", "did", "take", "takes", "took",
    "get", "gets", "got", "make", "makes", "made", "cause", "causes", "feel", "feels", "felt", "think", "know", "knew",
    "go", "goes", "went", "said", "say", "says", "can", "could", "will", "would", "should", "may", "might", "must",
    "help", "helps", "start", "tried", "try", "show", "shows", "suggests", "leads", "reduces", "worsens", "prevents",
];
const VERB_SUFFIXES: &[&str] = &["ing", "ed", "ize", "ise", "ate"];

#[derive(Debug, Clone, Copy, Default)]
pub struct RulePosTagger;

impl RulePosTagger {
    pub fn tag_token(token: &str) -> PosTag {
        if is_number(token) {
            return PosTag::Num;
        }
        if !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric()) {
            return PosTag::Punct;
        }
        let alphabetic = !token.is_empty()
            && token.chars().all(|c| c.is_alphabetic() || c == '\'' || c == '-')
            && token.chars().any(char::is_alphabetic);
        if !alphabetic {
            return PosTag::Other;
        }
        let lower = token.to_lowercase();
        if VERB_WORDS.contains(&lower.as_str()) || (lower.len() > 4 && VERB_SUFFIXES.iter().any(|s| lower.ends_with(s)))
        {
            PosTag::VerbLike
        } else {
            PosTag::NounLike
        }
    }
}

impl PosTagger for RulePosTagger {
    fn tag(&self, tokens: &[&str]) -> Vec<PosTag> {
        tokens.iter().map(|t| Self::tag_token(t)).collect()
    }
}

/// Optional sign, digits with `.`/`,` group separators.
fn is_number(token: &str) -> bool {
    let body = token.strip_prefix(['+', '-']).unwrap_or(token);
    let mut digits = 0;
    let mut prev_sep = true;
    for c in body.chars() {
        if c.is_ascii_digit() {
            digits += 1;
            prev_sep = false;
        } else if (c == '.' || c == ',') && !prev_sep {
            prev_sep = true;
        } else {
            return false;
        }
    }
    digits > 0 && !prev_sep
}

/// Hashed feature buckets active at one position; every weight is 1.0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector {
    buckets: Vec<u32>,
}

impl FeatureVector {
    pub fn from_buckets(mut buckets: Vec<u32>) -> Self {
        buckets.sort_unstable();
        buckets.dedup();
        Self { buckets }
    }

    pub fn buckets(&self) -> &[u32] {
        &self.buckets
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureExtractor {
    bucket_count: usize,
    units: Vec<String>,
}

impl FeatureExtractor {
    pub fn new(bucket_count: usize) -> Result<Self> {
        Self::with_units(bucket_count, DEFAULT_UNITS.iter().map(|s| s.to_string()).collect())
    }

    pub fn with_units(bucket_count: usize, units: Vec<String>) -> Result<Self> {
        if !bucket_count.is_power_of_two() || bucket_count > u32::MAX as usize {
            return Err(TaggerError::InvalidModel(format!(
                "bucket count {bucket_count} is not a power of two"
            )));
        }
        Ok(Self {
            bucket_count,
            units: units.into_iter().map(|u| u.to_lowercase()).collect(),
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn feature_strings(&self, tokens: &[&str], pos_tags: &[PosTag], position: usize) -> Result<Vec<String>> {
        if position >= tokens.len() || pos_tags.len() != tokens.len() {
            return Err(TaggerError::PositionOutOfRange {
                position,
                len: tokens.len(),
            });
        }
        let tok = tokens[position];
        let prev = if position == 0 {
            "<BOS>".to_string()
        } else {
            tokens[position - 1].to_lowercase()
        };
        let next = tokens
            .get(position + 1)
            .map_or_else(|| "<EOS>".to_string(), |t| t.to_lowercase());
        let mut feats = vec![
            format!("cur={}", tok.to_lowercase()),
            format!("prev={prev}"),
            format!("next={next}"),
            format!("pos={}", pos_tags[position]),
        ];
        if tok.chars().any(|c| c.is_ascii_digit()) {
            feats.push("has_digit".into());
        }
        if tok.chars().any(char::is_uppercase) {
            feats.push("has_upper".into());
        }
        if self.has_unit(tok) {
            feats.push("has_unit".into());
        }
        Ok(feats)
    }

    /// A unit token (`mg`) or a number immediately followed by one (`50mg`).
    fn has_unit(&self, tok: &str) -> bool {
        let lower = tok.to_lowercase();
        let suffix = lower.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ',');
        self.units.iter().any(|u| u == suffix && !suffix.is_empty())
    }

    pub fn extract(&self, tokens: &[&str], pos_tags: &[PosTag], position: usize) -> Result<FeatureVector> {
        let mask = (self.bucket_count - 1) as u64;
        let buckets = self
            .feature_strings(tokens, pos_tags, position)?
            .iter()
            .map(|f| (hash_str(f) & mask) as u32)
            .collect();
        Ok(FeatureVector::from_buckets(buckets))
    }

    /// Features for every position of a token sequence using the rule
    /// POS tagger.
    pub fn sequence(&self, tokens: &[&str]) -> Vec<FeatureVector> {
        let pos = RulePosTagger.tag(tokens);
        (0..tokens.len())
            .map(|i| self.extract(tokens, &pos, i).expect("position in range"))
            .collect()
    }
}

/// Rule-tagger POS tags followed by hashed features for one position.
pub fn extract_features(
    extractor: &FeatureExtractor,
    tokens: &[&str],
    pos_tags: &[PosTag],
    position: usize,
) -> Result<FeatureVector> {
    extractor.extract(tokens, pos_tags, position)
}

pub fn pos_tag(tokens: &[&str]) -> Vec<PosTag> {
    RulePosTagger.tag(tokens)
}
