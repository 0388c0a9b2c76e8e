//! Expert relevance judgments: majority grades, agreement and cumulative
//! relevance counts over a run.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::Run;
use super::{Result, RetrieverError};
use crate::corpus::{fleiss_kappa, Grade, Judgment};

pub const DEFAULT_JUDGE_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgmentSummary {
    /// Final grade per `(claim_id, abstract_id)`.
    #[serde(skip)]
    pub grades: BTreeMap<(String, String), Grade>,
    pub items: usize,
    /// Items with no majority, resolved to the middle grade.
    pub ties: usize,
    /// Percentages over items with at least two raters.
    pub all_agree_pct: f64,
    pub none_agree_pct: f64,
    /// Fleiss kappa over items rated by the most common number of raters.
    pub kappa: Option<f64>,
    pub kappa_items: usize,
    pub warnings: Vec<String>,
}

/// Majority grade per item; an item with no grade holding more than half of
/// the votes gets `SomewhatRelevant` and is counted as a tie.
pub fn aggregate_judgments(judgments: &[Judgment]) -> Result<JudgmentSummary> {
    let mut items: BTreeMap<(String, String), BTreeMap<String, Grade>> = BTreeMap::new();
    for j in judgments {
        let raters = items.entry((j.claim_id.clone(), j.abstract_id.clone())).or_default();
        if raters.insert(j.rater_id.clone(), j.grade).is_some() {
            return Err(RetrieverError::InvalidJudgments(format!(
                "rater {} judged ({}, {}) twice",
                j.rater_id, j.claim_id, j.abstract_id
            )));
        }
    }
    let mut grades = BTreeMap::new();
    let mut ties = 0;
    let (mut multi, mut all_agree, mut none_agree) = (0usize, 0usize, 0usize);
    let mut warnings = Vec::new();
    let mut by_rater_count: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (key, raters) in &items {
        let mut counts = [0usize; 3];
        for g in raters.values() {
            counts[*g as usize - 1] += 1;
        }
        let n = raters.len();
        let majority = Grade::ALL.iter().copied().find(|g| 2 * counts[*g as usize - 1] > n);
        let grade = majority.unwrap_or_else(|| {
            ties += 1;
            Grade::SomewhatRelevant
        });
        grades.insert(key.clone(), grade);
        if n < 2 {
            warnings.push(format!(
                "({}, {}) has a single rater; excluded from agreement",
                key.0, key.1
            ));
            continue;
        }
        multi += 1;
        let distinct = counts.iter().filter(|&&c| c > 0).count();
        if distinct == 1 {
            all_agree += 1;
        }
        if distinct == n {
            none_agree += 1;
        }
        by_rater_count.entry(n).or_default().push(counts.to_vec());
    }
    let share = |c: usize| {
        if multi == 0 {
            0.0
        } else {
            (c as f64 * 10000.0 / multi as f64).round() / 100.0
        }
    };
    // Most common rater count, the larger one on a draw.
    let modal = by_rater_count.iter().max_by_key(|(n, rows)| (rows.len(), **n));
    let (kappa, kappa_items) = match modal {
        Some((&n, rows)) => (fleiss_kappa(rows, n).ok(), rows.len()),
        None => (None, 0),
    };
    Ok(JudgmentSummary {
        items: grades.len(),
        grades,
        ties,
        all_agree_pct: share(all_agree),
        none_agree_pct: share(none_agree),
        kappa,
        kappa_items,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelevanceRow {
    pub k: usize,
    pub relevant: usize,
    pub somewhat_relevant: usize,
    pub irrelevant: usize,
    pub unjudged: usize,
}

/// For each k, how many of all queries' top-k results carry each grade.
pub fn cumulative_relevance_table(
    run: &Run,
    grades: &BTreeMap<(String, String), Grade>,
    ks: &[usize],
) -> Vec<RelevanceRow> {
    let lookup: HashMap<(&str, &str), Grade> = grades
        .iter()
        .map(|((c, a), g)| ((c.as_str(), a.as_str()), *g))
        .collect();
    ks.iter()
        .map(|&k| {
            let mut row = RelevanceRow {
                k,
                relevant: 0,
                somewhat_relevant: 0,
                irrelevant: 0,
                unjudged: 0,
            };
            for list in run.values() {
                for h in list.hits.iter().take(k) {
                    match lookup.get(&(list.claim_id.as_str(), h.abstract_id.as_str())) {
                        Some(Grade::Relevant) => row.relevant += 1,
                        Some(Grade::SomewhatRelevant) => row.somewhat_relevant += 1,
                        Some(Grade::Irrelevant) => row.irrelevant += 1,
                        None => row.unjudged += 1,
                    }
                }
            }
            row
        })
        .collect()
}

pub fn render_relevance_table(rows: &[RelevanceRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>9} {:>9} {:>10} {:>9}",
        "k", "relevant", "somewhat", "irrelevant", "unjudged"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>9} {:>9} {:>10} {:>9}",
            r.k, r.relevant, r.somewhat_relevant, r.irrelevant, r.unjudged
        );
    }
    out
}
