//! Linear-chain CRF: scoring, forward-backward in log space, negative
//! log-likelihood gradient and constrained Viterbi decoding.

use std::collections::BTreeMap;

use crate::corpus::{Span, SpanLabel};

use super::features::FeatureVector;
use super::{Result, TaggerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioLabel {
    O,
    B,
    I,
}

/// BIO tag set over one or more span kinds. Tag 0 is `O`; kind `k` owns
/// tags `1 + 2k` (B) and `2 + 2k` (I).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    kinds: Vec<SpanLabel>,
}

impl TagSet {
    pub fn new(kinds: Vec<SpanLabel>) -> Self {
        Self { kinds }
    }

    pub fn binary(kind: SpanLabel) -> Self {
        Self::new(vec![kind])
    }

    pub fn pio() -> Self {
        Self::new(SpanLabel::PIO.to_vec())
    }

    pub fn kinds(&self) -> &[SpanLabel] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn decode(&self, tag: usize) -> (BioLabel, Option<SpanLabel>) {
        if tag == 0 {
            (BioLabel::O, None)
        } else {
            let kind = self.kinds[(tag - 1) / 2];
            if (tag - 1) % 2 == 0 {
                (BioLabel::B, Some(kind))
            } else {
                (BioLabel::I, Some(kind))
            }
        }
    }

    pub fn begin(&self, kind: SpanLabel) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind).map(|i| 1 + 2 * i)
    }

    /// `I-k` may only follow `B-k` or `I-k`, and never starts a sequence.
    pub fn allowed(&self, prev: Option<usize>, cur: usize) -> bool {
        match self.decode(cur) {
            (BioLabel::I, _) => prev.is_some_and(|p| p != 0 && (p - 1) / 2 == (cur - 1) / 2),
            _ => true,
        }
    }

    /// BIO encoding of `spans` over `n` tokens; spans of kinds outside the
    /// tag set are ignored.
    pub fn encode(&self, spans: &[Span], n: usize) -> Vec<usize> {
        let mut tags = vec![0; n];
        for s in spans {
            if let Some(b) = self.begin(s.label) {
                for (i, t) in tags[s.token_start..s.token_end.min(n)].iter_mut().enumerate() {
                    *t = if i == 0 { b } else { b + 1 };
                }
            }
        }
        tags
    }

    /// Spans from a tag sequence. A stray `I` opens a new span.
    pub fn spans(&self, tags: &[usize]) -> Vec<Span> {
        let mut out = Vec::new();
        let mut open: Option<(SpanLabel, usize)> = None;
        for (i, &t) in tags.iter().enumerate() {
            let (bio, kind) = self.decode(t);
            match (bio, open) {
                (BioLabel::I, Some((k, _))) if Some(k) == kind => {}
                _ => {
                    if let Some((k, start)) = open.take() {
                        out.push(Span::new(k, start, i));
                    }
                    if let Some(k) = kind {
                        open = Some((k, i));
                    }
                }
            }
        }
        if let Some((k, start)) = open {
            out.push(Span::new(k, start, tags.len()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub tag_set: TagSet,
    pub bucket_count: usize,
    pub l2: f64,
    pub units: Vec<String>,
    /// `bucket_count x K`, row-major by bucket.
    pub unary: Vec<f64>,
    /// `K x K`, indexed `[prev * K + cur]`.
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Gradient with the model's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub unary: Vec<f64>,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Unregularised NLL gradient with unary rows stored only for the buckets
/// that occur in the sequence.
#[derive(Debug, Clone, Default)]
pub(crate) struct SparseGradient {
    pub unary: BTreeMap<u32, Vec<f64>>,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SparseGradient {
    pub fn zeros(k: usize) -> Self {
        Self {
            unary: BTreeMap::new(),
            transition: vec![0.0; k * k],
            start: vec![0.0; k],
            end: vec![0.0; k],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for row in self.unary.values_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
        for v in self.transition.iter_mut().chain(&mut self.start).chain(&mut self.end) {
            *v *= s;
        }
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl CrfModel {
    pub fn zeros(tag_set: TagSet, bucket_count: usize, l2: f64, units: Vec<String>) -> Self {
        let k = tag_set.len();
        Self {
            tag_set,
            bucket_count,
            l2,
            units,
            unary: vec![0.0; bucket_count * k],
            transition: vec![0.0; k * k],
            start: vec![0.0; k],
            end: vec![0.0; k],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.tag_set.len()
    }

    /// Per-position, per-label unary scores.
    pub fn emissions(&self, feats: &[FeatureVector]) -> Vec<Vec<f64>> {
        let k = self.num_labels();
        feats
            .iter()
            .map(|fv| {
                let mut e = vec![0.0; k];
                for &b in fv.buckets() {
                    let row = &self.unary[b as usize * k..(b as usize + 1) * k];
                    e.iter_mut().zip(row).for_each(|(e, w)| *e += w);
                }
                e
            })
            .collect()
    }

    pub fn score(&self, feats: &[FeatureVector], tags: &[usize]) -> f64 {
        self.score_emissions(&self.emissions(feats), tags)
    }

    fn score_emissions(&self, em: &[Vec<f64>], tags: &[usize]) -> f64 {
        let k = self.num_labels();
        let mut s = self.start[tags[0]] + self.end[tags[tags.len() - 1]];
        for (t, &y) in tags.iter().enumerate() {
            s += em[t][y];
            if t > 0 {
                s += self.transition[tags[t - 1] * k + y];
            }
        }
        s
    }

    fn forward(&self, em: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.num_labels();
        let mut alpha = Vec::with_capacity(em.len());
        alpha.push((0..k).map(|y| self.start[y] + em[0][y]).collect::<Vec<_>>());
        for t in 1..em.len() {
            let prev = &alpha[t - 1];
            let row = (0..k)
                .map(|y| em[t][y] + log_sum_exp((0..k).map(|p| prev[p] + self.transition[p * k + y])))
                .collect();
            alpha.push(row);
        }
        alpha
    }

    fn backward(&self, em: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.num_labels();
        let n = em.len();
        let mut beta = vec![vec![0.0; k]; n];
        beta[n - 1].clone_from(&self.end);
        for t in (0..n - 1).rev() {
            for y in 0..k {
                beta[t][y] = log_sum_exp((0..k).map(|c| self.transition[y * k + c] + em[t + 1][c] + beta[t + 1][c]));
            }
        }
        beta
    }

    fn log_z_from(&self, alpha: &[Vec<f64>]) -> f64 {
        let last = &alpha[alpha.len() - 1];
        log_sum_exp((0..self.num_labels()).map(|y| last[y] + self.end[y]))
    }

    /// Per-position label marginals from forward-backward.
    pub fn marginals(&self, feats: &[FeatureVector]) -> Vec<Vec<f64>> {
        let em = self.emissions(feats);
        let alpha = self.forward(&em);
        let beta = self.backward(&em);
        let log_z = self.log_z_from(&alpha);
        alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a + b - log_z).exp()).collect())
            .collect()
    }

    /// `log Z - score(gold)` without the gradient.
    pub(crate) fn nll(&self, feats: &[FeatureVector], gold: &[usize]) -> Result<f64> {
        if feats.is_empty() || feats.len() != gold.len() {
            return Err(TaggerError::LengthMismatch {
                features: feats.len(),
                labels: gold.len(),
            });
        }
        let em = self.emissions(feats);
        let nll = self.log_z_from(&self.forward(&em)) - self.score_emissions(&em, gold);
        if nll.is_finite() {
            Ok(nll)
        } else {
            Err(TaggerError::NumericalOverflow)
        }
    }

    pub(crate) fn sparse_nll(&self, feats: &[FeatureVector], gold: &[usize]) -> Result<(f64, SparseGradient)> {
        let k = self.num_labels();
        if feats.is_empty() || feats.len() != gold.len() {
            return Err(TaggerError::LengthMismatch {
                features: feats.len(),
                labels: gold.len(),
            });
        }
        if let Some(&bad) = gold.iter().find(|&&y| y >= k) {
            return Err(TaggerError::InvalidLabel(bad));
        }
        let em = self.emissions(feats);
        let alpha = self.forward(&em);
        let beta = self.backward(&em);
        let log_z = self.log_z_from(&alpha);
        let gold_score = self.score_emissions(&em, gold);
        let nll = log_z - gold_score;
        if !nll.is_finite() {
            return Err(TaggerError::NumericalOverflow);
        }

        let n = feats.len();
        let mut g = SparseGradient::zeros(k);
        for t in 0..n {
            let marg: Vec<f64> = (0..k).map(|y| (alpha[t][y] + beta[t][y] - log_z).exp()).collect();
            let mut delta = marg.clone();
            delta[gold[t]] -= 1.0;
            for &b in feats[t].buckets() {
                let row = g.unary.entry(b).or_insert_with(|| vec![0.0; k]);
                row.iter_mut().zip(&delta).for_each(|(r, d)| *r += d);
            }
            if t == 0 {
                g.start.iter_mut().zip(&delta).for_each(|(r, d)| *r += d);
            }
            if t == n - 1 {
                g.end.iter_mut().zip(&delta).for_each(|(r, d)| *r += d);
            }
            if t > 0 {
                for p in 0..k {
                    for c in 0..k {
                        let pair = (alpha[t - 1][p] + self.transition[p * k + c] + em[t][c] + beta[t][c] - log_z).exp();
                        g.transition[p * k + c] += pair;
                    }
                }
                g.transition[gold[t - 1] * k + gold[t]] -= 1.0;
            }
        }
        Ok((nll, g))
    }

    pub fn squared_norm(&self) -> f64 {
        self.unary
            .iter()
            .chain(&self.transition)
            .chain(&self.start)
            .chain(&self.end)
            .map(|w| w * w)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.unary
            .iter()
            .chain(&self.transition)
            .chain(&self.start)
            .chain(&self.end)
            .all(|w| w.is_finite())
    }
}

/// `log Z` by the forward recursion.
pub fn log_partition(model: &CrfModel, feats: &[FeatureVector]) -> f64 {
    if feats.is_empty() {
        return 0.0;
    }
    let em = model.emissions(feats);
    model.log_z_from(&model.forward(&em))
}

/// `log Z - score(gold) + l2/2 * ||w||^2` and its full gradient.
pub fn crf_nll_and_gradient(model: &CrfModel, feats: &[FeatureVector], gold: &[usize]) -> Result<(f64, CrfGradient)> {
    let (nll, sparse) = model.sparse_nll(feats, gold)?;
    let k = model.num_labels();
    let l2 = model.l2;
    let mut unary: Vec<f64> = model.unary.iter().map(|w| l2 * w).collect();
    for (&b, row) in &sparse.unary {
        for (u, r) in unary[b as usize * k..(b as usize + 1) * k].iter_mut().zip(row) {
            *u += r;
        }
    }
    let add = |g: &[f64], w: &[f64]| g.iter().zip(w).map(|(g, w)| g + l2 * w).collect();
    let grad = CrfGradient {
        unary,
        transition: add(&sparse.transition, &model.transition),
        start: add(&sparse.start, &model.start),
        end: add(&sparse.end, &model.end),
    };
    Ok((nll + 0.5 * l2 * model.squared_norm(), grad))
}

/// Highest-scoring tag sequence under the BIO constraints, with its score.
/// Ties go to the lowest tag index at each backpointer.
pub fn viterbi_decode(model: &CrfModel, feats: &[FeatureVector]) -> (Vec<usize>, f64) {
    if feats.is_empty() {
        return (Vec::new(), 0.0);
    }
    let k = model.num_labels();
    let ts = &model.tag_set;
    let em = model.emissions(feats);
    let n = feats.len();
    let mut delta: Vec<f64> = (0..k)
        .map(|y| {
            if ts.allowed(None, y) {
                model.start[y] + em[0][y]
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for y in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..k {
                if !ts.allowed(Some(p), y) {
                    continue;
                }
                let s = delta[p] + model.transition[p * k + y];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next[y] = best + em[t][y];
            back[t][y] = arg;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..k {
        let s = delta[y] + model.end[y];
        if s > best {
            best = s;
            last = y;
        }
    }
    let mut tags = vec![0; n];
    tags[n - 1] = last;
    for t in (1..n).rev() {
        tags[t - 1] = back[t][tags[t]];
    }
    // Rescored in the canonical summation order so it compares exactly
    // with `CrfModel::score`.
    let score = model.score(feats, &tags);
    (tags, score)
}
