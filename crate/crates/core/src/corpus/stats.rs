use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use super::{AnnotationSet, Post, SpanLabel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationStats {
    pub population: String,
    pub posts: usize,
    pub tokens: usize,
    pub claims: usize,
    pub questions: usize,
    pub experiences: usize,
    pub pop_in_claims: usize,
    pub int_in_claims: usize,
    pub out_in_claims: usize,
}

impl PopulationStats {
    fn empty(population: &str) -> Self {
        Self {
            population: population.to_string(),
            posts: 0,
            tokens: 0,
            claims: 0,
            questions: 0,
            experiences: 0,
            pop_in_claims: 0,
            int_in_claims: 0,
            out_in_claims: 0,
        }
    }

    pub fn avg_post_tokens(&self) -> f64 {
        if self.posts == 0 {
            0.0
        } else {
            self.tokens as f64 / self.posts as f64
        }
    }

    /// Mean number of `kind` spans per claim; `None` when there are no claims.
    pub fn avg_per_claim(&self, kind: SpanLabel) -> Option<f64> {
        let total = match kind {
            SpanLabel::Pop => self.pop_in_claims,
            SpanLabel::Int => self.int_in_claims,
            SpanLabel::Out => self.out_in_claims,
            _ => return None,
        };
        (self.claims > 0).then(|| total as f64 / self.claims as f64)
    }

    fn accumulate(&mut self, other: &PopulationStats) {
        self.posts += other.posts;
        self.tokens += other.tokens;
        self.claims += other.claims;
        self.questions += other.questions;
        self.experiences += other.experiences;
        self.pop_in_claims += other.pop_in_claims;
        self.int_in_claims += other.int_in_claims;
        self.out_in_claims += other.out_in_claims;
    }

    fn report_row(&self) -> serde_json::Value {
        let avg = |k| fmt_opt(self.avg_per_claim(k));
        serde_json::json!({
            "population": self.population,
            "posts": self.posts,
            "avg_post_tokens": format!("{:.2}", self.avg_post_tokens()),
            "claims": self.claims,
            "questions": self.questions,
            "experiences": self.experiences,
            "avg_pop_per_claim": avg(SpanLabel::Pop),
            "avg_int_per_claim": avg(SpanLabel::Int),
            "avg_out_per_claim": avg(SpanLabel::Out),
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub populations: Vec<PopulationStats>,
    pub overall: PopulationStats,
}

impl CorpusStats {
    pub fn population(&self, name: &str) -> Option<&PopulationStats> {
        self.populations.iter().find(|p| p.population == name)
    }

    /// JSON report with two-decimal averages and `"n/a"` for undefined ones.
    pub fn to_report(&self) -> serde_json::Value {
        serde_json::json!({
            "populations": self.populations.iter().map(PopulationStats::report_row).collect::<Vec<_>>(),
            "overall": self.overall.report_row(),
        })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>9} {:>7} {:>9} {:>11} {:>7} {:>7} {:>7}",
            "population", "posts", "avg_len", "claims", "questions", "experiences", "#P/c", "#I/c", "#O/c"
        );
        for row in self.populations.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>9.2} {:>7} {:>9} {:>11} {:>7} {:>7} {:>7}",
                row.population,
                row.posts,
                row.avg_post_tokens(),
                row.claims,
                row.questions,
                row.experiences,
                fmt_opt(row.avg_per_claim(SpanLabel::Pop)),
                fmt_opt(row.avg_per_claim(SpanLabel::Int)),
                fmt_opt(row.avg_per_claim(SpanLabel::Out)),
            );
        }
        out
    }
}

/// Descriptive statistics per population. `annotations` holds one resolved
/// (aggregate or gold) set per post; posts without one count as unannotated.
pub fn corpus_stats(posts: &[Post], annotations: &[AnnotationSet]) -> CorpusStats {
    let by_post: HashMap<&str, &AnnotationSet> = annotations.iter().map(|a| (a.post_id.as_str(), a)).collect();
    let mut rows: BTreeMap<&str, PopulationStats> = BTreeMap::new();
    for post in posts {
        let row = rows
            .entry(post.population.as_str())
            .or_insert_with(|| PopulationStats::empty(&post.population));
        row.posts += 1;
        row.tokens += post.len();
        let Some(set) = by_post.get(post.id.as_str()) else {
            continue;
        };
        for span in &set.spans {
            match span.label {
                SpanLabel::Claim => {
                    row.claims += 1;
                    for pio in set.pio_within(span) {
                        match pio.label {
                            SpanLabel::Pop => row.pop_in_claims += 1,
                            SpanLabel::Int => row.int_in_claims += 1,
                            SpanLabel::Out => row.out_in_claims += 1,
                            _ => {}
                        }
                    }
                }
                SpanLabel::Question => row.questions += 1,
                SpanLabel::Experience => row.experiences += 1,
                _ => {}
            }
        }
    }
    let mut overall = PopulationStats::empty("all");
    for row in rows.values() {
        overall.accumulate(row);
    }
    CorpusStats {
        populations: rows.into_values().collect(),
        overall,
    }
}
