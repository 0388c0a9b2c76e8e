//! Okapi BM25 over abstract `title text`.

use std::collections::HashMap;

use super::encoder::words;
use super::index::{top_k, Hit, RankedList};
use super::{Result, RetrieverError};
use crate::corpus::EvidenceAbstract;

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    ids: Vec<String>,
    doc_len: Vec<f64>,
    avg_len: f64,
    /// term -> (document, term frequency)
    postings: HashMap<String, Vec<(usize, f64)>>,
}

/// Lowercased word tokens across all separator-delimited segments.
pub fn bm25_terms(text: &str) -> Vec<String> {
    words(text).into_iter().flatten().collect()
}

impl Bm25Index {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of every document; repeated query terms count once per repeat.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for term in bm25_terms(query) {
            let Some(posting) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in posting {
                let norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[doc] / self.avg_len);
                scores[doc] += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }
}

pub fn bm25_build(abstracts: &[EvidenceAbstract], k1: f64, b: f64) -> Result<Bm25Index> {
    if abstracts.is_empty() {
        return Err(RetrieverError::Empty("no abstracts to index".into()));
    }
    let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    let mut doc_len = Vec::with_capacity(abstracts.len());
    for (i, a) in abstracts.iter().enumerate() {
        let terms = bm25_terms(&a.document_text());
        doc_len.push(terms.len() as f64);
        let mut tf: HashMap<String, f64> = HashMap::new();
        for t in terms {
            *tf.entry(t).or_default() += 1.0;
        }
        for (t, c) in tf {
            postings.entry(t).or_default().push((i, c));
        }
    }
    let avg_len = (doc_len.iter().sum::<f64>() / doc_len.len() as f64).max(f64::MIN_POSITIVE);
    Ok(Bm25Index {
        k1,
        b,
        ids: abstracts.iter().map(|a| a.id.clone()).collect(),
        doc_len,
        avg_len,
        postings,
    })
}

/// Top `k` documents, ties broken by ascending id.
pub fn bm25_search(index: &Bm25Index, claim_id: &str, query: &str, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(RetrieverError::InvalidConfig("k must be at least 1".into()));
    }
    let scores = index.scores(query);
    let scored = index.ids.iter().map(String::as_str).zip(scores).collect();
    Ok(RankedList {
        claim_id: claim_id.to_string(),
        k,
        hits: top_k(scored, k)
            .into_iter()
            .map(|(id, score)| Hit {
                abstract_id: id.to_string(),
                score,
            })
            .collect(),
    })
}
