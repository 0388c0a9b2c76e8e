//! Majority-vote aggregation, Fleiss kappa and token-level P/R/F1.

use std::collections::HashMap;

use serde::Serialize;

use super::{AnnotationSet, CorpusError, Post, Result, Span, SpanLabel};

pub const AGGREGATE_ID: &str = "aggregate";

/// Per-token, per-label majority vote. A label is kept on a token only when
/// strictly more than half of the annotators assigned it; ties drop it.
pub fn aggregate_labels(sets: &[AnnotationSet], post: &Post) -> Result<AnnotationSet> {
    if sets.len() < 2 {
        return Err(CorpusError::TooFewAnnotators(sets.len()));
    }
    for s in sets {
        if s.post_id != post.id {
            return Err(CorpusError::MixedPosts(post.id.clone(), s.post_id.clone()));
        }
        s.validate(post.len())?;
    }
    let n = post.len();
    let mut spans = Vec::new();
    for label in SpanLabel::ALL {
        let mut votes = vec![0usize; n];
        for set in sets {
            for span in set.spans_with(label) {
                for v in &mut votes[span.token_start..span.token_end] {
                    *v += 1;
                }
            }
        }
        let keep: Vec<bool> = votes.iter().map(|&v| 2 * v > sets.len()).collect();
        spans.extend(runs(&keep).map(|(a, b)| Span::new(label, a, b)));
    }
    Ok(AnnotationSet::new(post.id.clone(), AGGREGATE_ID, spans))
}

/// Maximal runs of `true` as half-open ranges.
pub(crate) fn runs(mask: &[bool]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < mask.len() && !mask[i] {
            i += 1;
        }
        if i >= mask.len() {
            return None;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        Some((start, i))
    })
}

/// Fleiss kappa over an items-by-categories count matrix where every item
/// was rated by exactly `n_raters` raters.
pub fn fleiss_kappa(matrix: &[Vec<usize>], n_raters: usize) -> Result<f64> {
    if n_raters < 2 {
        return Err(CorpusError::InvalidRatings(format!(
            "need at least 2 raters, got {n_raters}"
        )));
    }
    if matrix.is_empty() {
        return Err(CorpusError::InvalidRatings("no items".into()));
    }
    let k = matrix[0].len();
    let n = n_raters as f64;
    let mut category_totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != k {
            return Err(CorpusError::InvalidRatings(format!(
                "item {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let total: usize = row.iter().sum();
        if total != n_raters {
            return Err(CorpusError::InvalidRatings(format!(
                "item {i} has {total} ratings, expected {n_raters}"
            )));
        }
        let sq: usize = row.iter().map(|&c| c * c).sum();
        p_bar += (sq as f64 - n) / (n * (n - 1.0));
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    let items = matrix.len() as f64;
    p_bar /= items;
    let p_e: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (items * n);
            p * p
        })
        .sum();
    if p_e >= 1.0 - 1e-12 {
        return if p_bar >= 1.0 - 1e-12 {
            Ok(1.0)
        } else {
            Err(CorpusError::DegenerateDistribution)
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Binary Fleiss kappa for one label over every token of every post that has
/// exactly `n_raters` annotation sets. Posts with a different number of
/// sets are skipped.
pub fn label_kappa(posts: &[Post], sets: &[AnnotationSet], label: SpanLabel, n_raters: usize) -> Result<f64> {
    let mut by_post: HashMap<&str, Vec<&AnnotationSet>> = HashMap::new();
    for s in sets {
        by_post.entry(s.post_id.as_str()).or_default().push(s);
    }
    let mut matrix = Vec::new();
    for post in posts {
        let Some(group) = by_post.get(post.id.as_str()) else {
            continue;
        };
        if group.len() != n_raters {
            continue;
        }
        let mut with = vec![0usize; post.len()];
        for set in group {
            for span in set.spans_with(label) {
                for w in &mut with[span.token_start..span.token_end.min(post.len())] {
                    *w += 1;
                }
            }
        }
        matrix.extend(with.into_iter().map(|w| vec![n_raters - w, w]));
    }
    fleiss_kappa(&matrix, n_raters)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PrfCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrfCounts {
    pub fn from_sets(pred: &AnnotationSet, gold: &AnnotationSet, label: SpanLabel) -> Self {
        Self::from_spans(pred.spans_with(label), gold.spans_with(label))
    }

    pub fn from_spans<'a>(pred: impl IntoIterator<Item = &'a Span>, gold: impl IntoIterator<Item = &'a Span>) -> Self {
        let tokens = |it: &mut dyn Iterator<Item = &'a Span>| {
            let mut v: Vec<usize> = it.flat_map(|s| s.token_start..s.token_end).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let p = tokens(&mut pred.into_iter());
        let g = tokens(&mut gold.into_iter());
        let tp = p.iter().filter(|t| g.binary_search(t).is_ok()).count();
        Self {
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        }
    }

    pub fn add(&mut self, other: PrfCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Token-level binary precision, recall and F1 of `pred` against `gold`.
pub fn token_prf(pred: &AnnotationSet, gold: &AnnotationSet, label: SpanLabel) -> Prf {
    PrfCounts::from_sets(pred, gold, label).prf()
}

/// Claim spans that overlap no Experience and no Question span.
pub fn identify_pure_claims(agg: &AnnotationSet) -> Vec<Span> {
    agg.spans_with(SpanLabel::Claim)
        .filter(|c| {
            !agg.spans
                .iter()
                .any(|s| matches!(s.label, SpanLabel::Experience | SpanLabel::Question) && s.overlaps(c))
        })
        .copied()
        .collect()
}
