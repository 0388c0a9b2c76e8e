//! Ranking metrics, run files and the random baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::index::{Hit, RankedList};
use super::{Result, RetrieverError};
use crate::hashing::derive_seed_str;

pub const DEFAULT_KS: [usize; 5] = [1, 5, 10, 50, 100];

pub type Run = BTreeMap<String, RankedList>;
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionConvention {
    /// Share of queries with a positive in the top k.
    Success,
    /// Share of the top k that is positive.
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub queries: usize,
    pub convention: PrecisionConvention,
    pub ks: Vec<usize>,
    /// Fractions in `[0, 1]`, one per k.
    pub mrr: Vec<f64>,
    pub precision: Vec<f64>,
}

fn pct(x: f64) -> f64 {
    (x * 10000.0).round() / 100.0
}

impl RankingReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.precision[i])
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mrr[i])
    }

    /// Metric x k grid, values x100 with two decimals.
    pub fn to_report(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .ks
            .iter()
            .enumerate()
            .map(|(i, k)| serde_json::json!({ "k": k, "MRR": pct(self.mrr[i]), "P": pct(self.precision[i]) }))
            .collect();
        serde_json::json!({ "queries": self.queries, "p_convention": self.convention, "grid": rows })
    }

    pub fn render_table(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = write!(out, "{name:<12}");
        for k in &self.ks {
            let _ = write!(out, " {:>8}", format!("MRR@{k}"));
        }
        for k in &self.ks {
            let _ = write!(out, " {:>8}", format!("P@{k}"));
        }
        let _ = write!(out, "\n{:<12}", "");
        for v in self.mrr.iter().chain(&self.precision) {
            let _ = write!(out, " {:>8.2}", pct(*v));
        }
        out.push('\n');
        out
    }
}

/// MRR@k and P@k over every query in `qrels`; a query missing from the run
/// scores zero. When every query has exactly one positive, P@k is success@k,
/// otherwise classical precision.
pub fn evaluate_ranking(run: &Run, qrels: &Qrels, ks: &[usize]) -> Result<RankingReport> {
    if let Some(q) = run.keys().find(|q| !qrels.contains_key(*q)) {
        return Err(RetrieverError::UnknownQuery(q.clone()));
    }
    if qrels.is_empty() {
        return Err(RetrieverError::Empty("no queries in qrels".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(RetrieverError::InvalidConfig(
            "ks must be non-empty and positive".into(),
        ));
    }
    let convention = if qrels.values().all(|p| p.len() == 1) {
        PrecisionConvention::Success
    } else {
        PrecisionConvention::Classical
    };
    let mut mrr = vec![0.0; ks.len()];
    let mut precision = vec![0.0; ks.len()];
    for (q, positives) in qrels {
        let hits: &[Hit] = run.get(q).map_or(&[], |r| &r.hits);
        let first = hits.iter().position(|h| positives.contains(&h.abstract_id));
        for (i, &k) in ks.iter().enumerate() {
            if let Some(r) = first.filter(|&r| r < k) {
                mrr[i] += 1.0 / (r + 1) as f64;
            }
            precision[i] += match convention {
                PrecisionConvention::Success => first.map_or(0.0, |r| if r < k { 1.0 } else { 0.0 }),
                PrecisionConvention::Classical => {
                    hits.iter()
                        .take(k)
                        .filter(|h| positives.contains(&h.abstract_id))
                        .count() as f64
                        / k as f64
                }
            };
        }
    }
    let n = qrels.len() as f64;
    Ok(RankingReport {
        queries: qrels.len(),
        convention,
        ks: ks.to_vec(),
        mrr: mrr.into_iter().map(|x| x / n).collect(),
        precision: precision.into_iter().map(|x| x / n).collect(),
    })
}

/// Seeded shuffle of `ids` per query, cut to `k`. Scores descend with rank.
pub fn random_baseline(ids: &[String], queries: &[String], k: usize, seed: u64) -> Run {
    let mut sorted = ids.to_vec();
    sorted.sort();
    queries
        .iter()
        .map(|q| {
            let mut order = sorted.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_str(seed, q)));
            order.truncate(k);
            let hits = order
                .into_iter()
                .enumerate()
                .map(|(r, id)| Hit {
                    abstract_id: id,
                    score: -(r as f64),
                })
                .collect();
            (
                q.clone(),
                RankedList {
                    claim_id: q.clone(),
                    k,
                    hits,
                },
            )
        })
        .collect()
}

/// Run file lines: `claim_id abstract_id rank score`, tab separated, rank
/// starting at 1.
pub fn format_run(run: &Run) -> String {
    let mut out = String::new();
    for list in run.values() {
        for (r, h) in list.hits.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", list.claim_id, h.abstract_id, r + 1, h.score);
        }
    }
    out
}
