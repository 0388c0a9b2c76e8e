use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::crf::{viterbi_decode, CrfModel, TagSet};
use super::features::FeatureExtractor;
use super::train::{train_crf, TrainConfig, TrainReport, TrainingExample};
use super::Result;
use crate::corpus::{identify_pure_claims, AnnotationSet, Post, Prf, PrfCounts, Span, SpanLabel};
use crate::hashing::derive_seed_str;
use crate::SEP;

pub const MODEL_ID: &str = "model";

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub bucket_count: usize,
    pub units: Vec<String>,
    pub train: TrainConfig,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            bucket_count: 1 << 18,
            units: super::DEFAULT_UNITS.iter().map(|s| s.to_string()).collect(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerBundle {
    pub claim: CrfModel,
    pub experience: CrfModel,
    pub question: CrfModel,
    pub pio: CrfModel,
}

fn token_texts(post: &Post) -> Vec<&str> {
    post.tokens.iter().map(|t| t.text.as_str()).collect()
}

/// Stage-1 BIO examples for one label, one per post with a matching set.
pub fn stage1_examples(
    extractor: &FeatureExtractor,
    posts: &[Post],
    sets: &[AnnotationSet],
    label: SpanLabel,
) -> Vec<TrainingExample> {
    let by_post: HashMap<&str, &AnnotationSet> = sets.iter().map(|s| (s.post_id.as_str(), s)).collect();
    let ts = TagSet::binary(label);
    posts
        .iter()
        .filter(|p| !p.is_empty())
        .filter_map(|p| {
            let set = by_post.get(p.id.as_str())?;
            Some(TrainingExample {
                features: extractor.sequence(&token_texts(p)),
                labels: ts.encode(&set.spans, p.len()),
            })
        })
        .collect()
}

/// Tokens of `post`, the separator and the tokens of `claim`.
fn pio_tokens<'a>(post: &'a Post, claim: &Span) -> Vec<&'a str> {
    let mut toks = token_texts(post);
    toks.push(SEP);
    toks.extend(
        post.tokens[claim.token_start..claim.token_end]
            .iter()
            .map(|t| t.text.as_str()),
    );
    toks
}

/// Stage-2 example for one claim. PIO spans are labelled wherever they
/// occur in the post segment, and those inside the claim are labelled again
/// in the claim segment.
pub fn pio_example(extractor: &FeatureExtractor, post: &Post, set: &AnnotationSet, claim: &Span) -> TrainingExample {
    let toks = pio_tokens(post, claim);
    let offset = post.len() + 1;
    let mut spans: Vec<Span> = set.spans.iter().filter(|s| s.label.is_pio()).copied().collect();
    spans.extend(set.pio_within(claim).map(|s| {
        Span::new(
            s.label,
            s.token_start - claim.token_start + offset,
            s.token_end - claim.token_start + offset,
        )
    }));
    TrainingExample {
        features: extractor.sequence(&toks),
        labels: TagSet::pio().encode(&spans, toks.len()),
    }
}

/// One stage-2 example per pure claim of every annotated post.
pub fn stage2_examples(extractor: &FeatureExtractor, posts: &[Post], sets: &[AnnotationSet]) -> Vec<TrainingExample> {
    let by_post: HashMap<&str, &AnnotationSet> = sets.iter().map(|s| (s.post_id.as_str(), s)).collect();
    let mut out = Vec::new();
    for post in posts {
        let Some(set) = by_post.get(post.id.as_str()) else {
            continue;
        };
        for claim in identify_pure_claims(set) {
            out.push(pio_example(extractor, post, set, &claim));
        }
    }
    out
}

impl TaggerBundle {
    /// Trains the four models. Each gets a seed derived from its label name,
    /// so retraining one never changes another.
    pub fn train(
        posts: &[Post],
        sets: &[AnnotationSet],
        config: &TaggerConfig,
    ) -> Result<(Self, Vec<(String, TrainReport)>)> {
        let fx = FeatureExtractor::with_units(config.bucket_count, config.units.clone())?;
        let mut reports = Vec::new();
        let mut fit = |name: &str, tag_set: TagSet, examples: Vec<TrainingExample>| -> Result<CrfModel> {
            let cfg = TrainConfig {
                seed: derive_seed_str(config.train.seed, name),
                ..config.train.clone()
            };
            let (model, report) = train_crf(&examples, tag_set, config.bucket_count, fx.units().to_vec(), &cfg)?;
            reports.push((name.to_string(), report));
            Ok(model)
        };
        let mut stage1 = Vec::new();
        for label in SpanLabel::STAGE1 {
            stage1.push(fit(
                label.as_str(),
                TagSet::binary(label),
                stage1_examples(&fx, posts, sets, label),
            )?);
        }
        let pio = fit("PIO", TagSet::pio(), stage2_examples(&fx, posts, sets))?;
        let question = stage1.pop().expect("three models");
        let experience = stage1.pop().expect("three models");
        let claim = stage1.pop().expect("three models");
        Ok((
            Self {
                claim,
                experience,
                question,
                pio,
            },
            reports,
        ))
    }

    pub fn stage1(&self) -> [(SpanLabel, &CrfModel); 3] {
        [
            (SpanLabel::Claim, &self.claim),
            (SpanLabel::Experience, &self.experience),
            (SpanLabel::Question, &self.question),
        ]
    }

    pub fn extractor(&self) -> FeatureExtractor {
        FeatureExtractor::with_units(self.claim.bucket_count, self.claim.units.clone())
            .expect("bucket count validated on construction")
    }
}

fn decode_spans(model: &CrfModel, fx: &FeatureExtractor, tokens: &[&str]) -> Vec<Span> {
    let (tags, _) = viterbi_decode(model, &fx.sequence(tokens));
    model.tag_set.spans(&tags)
}

/// Claim, Experience and Question spans from the three binary models.
pub fn tag_spans(bundle: &TaggerBundle, post: &Post) -> AnnotationSet {
    let mut spans = Vec::new();
    if !post.is_empty() {
        let toks = token_texts(post);
        for (_, model) in bundle.stage1() {
            spans.extend(decode_spans(model, &bundle.extractor(), &toks));
        }
    }
    AnnotationSet::new(post.id.clone(), MODEL_ID, spans)
}

/// PIO spans inside `claim`, in post token coordinates. Spans in the post
/// segment or crossing the separator are dropped.
pub fn tag_pio(bundle: &TaggerBundle, post: &Post, claim: &Span) -> Vec<Span> {
    if claim.is_empty() || claim.token_end > post.len() {
        return Vec::new();
    }
    let offset = post.len() + 1;
    decode_spans(&bundle.pio, &bundle.extractor(), &pio_tokens(post, claim))
        .into_iter()
        .filter(|s| s.token_start >= offset)
        .map(|s| {
            Span::new(
                s.label,
                s.token_start - offset + claim.token_start,
                s.token_end - offset + claim.token_start,
            )
        })
        .collect()
}

/// Stage-1 spans plus PIO spans for every predicted pure claim.
pub fn tag_post(bundle: &TaggerBundle, post: &Post) -> AnnotationSet {
    let mut set = tag_spans(bundle, post);
    let mut pio = Vec::new();
    for claim in identify_pure_claims(&set) {
        pio.extend(tag_pio(bundle, post, &claim));
    }
    set.spans.extend(pio);
    set
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelScore {
    pub label: SpanLabel,
    pub counts: PrfCounts,
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggerEvaluation {
    /// Token-level scores of stage-1 spans over whole posts.
    pub spans: Vec<LabelScore>,
    /// Token-level PIO scores over the gold pure claims, tagged given the
    /// gold claim span.
    pub pio: Vec<LabelScore>,
}

impl TaggerEvaluation {
    pub fn get(&self, label: SpanLabel) -> Option<&LabelScore> {
        self.spans.iter().chain(&self.pio).find(|s| s.label == label)
    }

    pub fn to_report(&self) -> serde_json::Value {
        let rows = |scores: &[LabelScore]| {
            scores
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "label": s.label.as_str(),
                        "precision": format!("{:.4}", s.prf.precision),
                        "recall": format!("{:.4}", s.prf.recall),
                        "f1": format!("{:.4}", s.prf.f1),
                        "tp": s.counts.tp,
                        "fp": s.counts.fp,
                        "fn": s.counts.fn_,
                    })
                })
                .collect::<Vec<_>>()
        };
        serde_json::json!({ "spans": rows(&self.spans), "pio": rows(&self.pio) })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for (title, scores) in [("span classification", &self.spans), ("PIO tagging", &self.pio)] {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(out, "{:<12} {:>7} {:>7} {:>7}", "label", "P", "R", "F1");
            for s in scores {
                let _ = writeln!(
                    out,
                    "{:<12} {:>7.4} {:>7.4} {:>7.4}",
                    s.label.as_str(),
                    s.prf.precision,
                    s.prf.recall,
                    s.prf.f1
                );
            }
        }
        out
    }
}

/// Micro-averaged token P/R/F1 per label over `posts` against `gold`.
pub fn evaluate_tagger(bundle: &TaggerBundle, posts: &[Post], gold: &[AnnotationSet]) -> TaggerEvaluation {
    let by_post: HashMap<&str, &AnnotationSet> = gold.iter().map(|s| (s.post_id.as_str(), s)).collect();
    let mut stage1 = [PrfCounts::default(); 3];
    let mut pio = [PrfCounts::default(); 3];
    for post in posts {
        let Some(set) = by_post.get(post.id.as_str()) else {
            continue;
        };
        let pred = tag_spans(bundle, post);
        for (counts, label) in stage1.iter_mut().zip(SpanLabel::STAGE1) {
            counts.add(PrfCounts::from_sets(&pred, set, label));
        }
        for claim in identify_pure_claims(set) {
            let predicted = tag_pio(bundle, post, &claim);
            for (counts, label) in pio.iter_mut().zip(SpanLabel::PIO) {
                counts.add(PrfCounts::from_spans(
                    predicted.iter().filter(|s| s.label == label),
                    set.pio_within(&claim).filter(|s| s.label == label),
                ));
            }
        }
    }
    let score = |counts: [PrfCounts; 3], labels: [SpanLabel; 3]| {
        counts
            .into_iter()
            .zip(labels)
            .map(|(counts, label)| LabelScore {
                label,
                counts,
                prf: counts.prf(),
            })
            .collect()
    };
    TaggerEvaluation {
        spans: score(stage1, SpanLabel::STAGE1),
        pio: score(pio, SpanLabel::PIO),
    }
}
