//! Pseudo-supervision: pure-claim posts become templates whose PIO mentions
//! are placeholders, and each template is filled from the PIO lists of an
//! evidence abstract, which is then relevant to the result by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{identify_pure_claims, AnnotationSet, EvidenceAbstract, Post, Span, SpanLabel};
use crate::hashing::derive_seed;

/// Draws allowed per requested abstract before a template gives up.
pub const DRAW_BUDGET: usize = 20;

#[derive(Debug, Error)]
pub enum PseudogenError {
    #[error("untemplatable claim in post {post_id}: no PIO span")]
    Untemplatable { post_id: String },
    #[error("kind unavailable: abstract {abstract_id} has no {kind} strings")]
    KindUnavailable { abstract_id: String, kind: SpanLabel },
    #[error("no compatible abstract for any template")]
    NoCompatibleAbstract,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PseudogenError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Slot(usize),
}

/// One placeholder: every mention of `surface` with this kind shares it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub kind: SpanLabel,
    pub surface: String,
    /// Token ranges of the mentions in the post.
    pub occurrences: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub post_id: String,
    pub population: String,
    pub post: Vec<Segment>,
    pub claim: Vec<Segment>,
    pub slots: Vec<Slot>,
}

fn placeholder(kind: SpanLabel) -> String {
    format!("[{}]", kind.as_str())
}

fn render(segments: &[Segment], fill: impl Fn(usize) -> String) -> String {
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Slot(i) => out.push_str(&fill(*i)),
        }
    }
    out
}

impl Template {
    pub fn post_text_with_placeholders(&self) -> String {
        render(&self.post, |i| placeholder(self.slots[i].kind))
    }

    pub fn claim_text_with_placeholders(&self) -> String {
        render(&self.claim, |i| placeholder(self.slots[i].kind))
    }

    /// Kinds an abstract must provide to fill this template.
    pub fn required_kinds(&self) -> Vec<SpanLabel> {
        let mut kinds: Vec<SpanLabel> = self.slots.iter().map(|s| s.kind).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    pub fn accepts(&self, abstract_: &EvidenceAbstract) -> bool {
        self.required_kinds().iter().all(|&k| !abstract_.elements(k).is_empty())
    }
}

/// Literal/slot segments covering bytes `start..end` of the post text.
fn segments(post: &Post, marks: &[(usize, usize, usize)], start: usize, end: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut cursor = start;
    for &(ts, te, slot) in marks {
        let (bs, be) = (post.tokens[ts].char_start, post.tokens[te - 1].char_end);
        if bs < start || be > end {
            continue;
        }
        if bs > cursor {
            out.push(Segment::Literal(post.text[cursor..bs].to_string()));
        }
        out.push(Segment::Slot(slot));
        cursor = be;
    }
    if end > cursor {
        out.push(Segment::Literal(post.text[cursor..end].to_string()));
    }
    out
}

/// Builds a template from a pure claim and the PIO spans inside it.
///
/// The annotated spans claim their tokens first, longest first; every other
/// token-aligned repetition of a slot's surface in the post is then bound to
/// the same slot, again longest surface first. A mention that would straddle
/// the claim boundary or overlap an earlier mention is left as text.
pub fn make_template(post: &Post, claim: &Span, pio: &[Span]) -> Result<Template> {
    let untemplatable = || PseudogenError::Untemplatable {
        post_id: post.id.clone(),
    };
    if claim.token_end > post.len() || claim.is_empty() {
        return Err(PseudogenError::InvalidRequest(format!(
            "claim span out of range for post {}",
            post.id
        )));
    }
    let mut spans: Vec<Span> = pio
        .iter()
        .filter(|s| s.label.is_pio() && claim.contains(s))
        .copied()
        .collect();
    if spans.is_empty() {
        return Err(untemplatable());
    }
    spans.sort_by_key(|s| (std::cmp::Reverse(s.len()), s.token_start));

    let token_texts: Vec<&str> = post.tokens.iter().map(|t| t.text.as_str()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; post.len()];
    let mut slots: Vec<Slot> = Vec::new();
    let mut slot_of: HashMap<(SpanLabel, &str), usize> = HashMap::new();
    let free = |owner: &[Option<usize>], a: usize, b: usize| owner[a..b].iter().all(Option::is_none);

    for s in &spans {
        if !free(&owner, s.token_start, s.token_end) {
            continue;
        }
        let (bs, be) = post.byte_range(s);
        let surface = &post.text[bs..be];
        let idx = *slot_of.entry((s.label, surface)).or_insert_with(|| {
            slots.push(Slot {
                kind: s.label,
                surface: surface.to_string(),
                occurrences: Vec::new(),
            });
            slots.len() - 1
        });
        owner[s.token_start..s.token_end]
            .iter_mut()
            .for_each(|o| *o = Some(idx));
        slots[idx].occurrences.push((s.token_start, s.token_end));
    }
    if slots.is_empty() {
        return Err(untemplatable());
    }

    // Other mentions of the same surface strings anywhere in the post.
    let mut by_length: Vec<usize> = (0..slots.len()).collect();
    by_length.sort_by_key(|&i| std::cmp::Reverse(slots[i].occurrences[0].1 - slots[i].occurrences[0].0));
    for i in by_length {
        let (fs, fe) = slots[i].occurrences[0];
        let pattern: Vec<&str> = token_texts[fs..fe].to_vec();
        let n = pattern.len();
        let mut t = 0;
        while t + n <= post.len() {
            let inside = t >= claim.token_start && t + n <= claim.token_end;
            let outside = t + n <= claim.token_start || t >= claim.token_end;
            if token_texts[t..t + n] == pattern[..] && free(&owner, t, t + n) && (inside || outside) {
                owner[t..t + n].iter_mut().for_each(|o| *o = Some(i));
                slots[i].occurrences.push((t, t + n));
                t += n;
            } else {
                t += 1;
            }
        }
        slots[i].occurrences.sort_unstable();
    }

    let mut marks: Vec<(usize, usize, usize)> = slots
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.occurrences.iter().map(move |&(a, b)| (a, b, i)))
        .collect();
    marks.sort_unstable();
    let (cs, ce) = post.byte_range(claim);
    Ok(Template {
        post_id: post.id.clone(),
        population: post.population.clone(),
        post: segments(post, &marks, 0, post.text.len()),
        claim: segments(post, &marks, cs, ce),
        slots,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub pseudo_post: String,
    pub pseudo_claim: String,
    pub pop: Vec<String>,
    pub int: Vec<String>,
    pub out: Vec<String>,
    pub positive_abstract_id: String,
    pub population_tag: String,
}

impl PseudoPair {
    pub fn elements(&self, kind: SpanLabel) -> &[String] {
        match kind {
            SpanLabel::Pop => &self.pop,
            SpanLabel::Int => &self.int,
            SpanLabel::Out => &self.out,
            _ => &[],
        }
    }
}

/// Fills every slot with a string drawn uniformly from the abstract's list of
/// that kind. All mentions of a slot get the same string.
pub fn instantiate(template: &Template, abstract_: &EvidenceAbstract, seed: u64) -> Result<PseudoPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fills = Vec::with_capacity(template.slots.len());
    for slot in &template.slots {
        let options = abstract_.elements(slot.kind);
        if options.is_empty() {
            return Err(PseudogenError::KindUnavailable {
                abstract_id: abstract_.id.clone(),
                kind: slot.kind,
            });
        }
        fills.push(options[rng.gen_range(0..options.len())].clone());
    }
    let mut lists: BTreeMap<SpanLabel, Vec<String>> = BTreeMap::new();
    for (slot, fill) in template.slots.iter().zip(&fills) {
        let list = lists.entry(slot.kind).or_default();
        if !list.contains(fill) {
            list.push(fill.clone());
        }
    }
    let mut take = |k| lists.remove(&k).unwrap_or_default();
    Ok(PseudoPair {
        pseudo_post: render(&template.post, |i| fills[i].clone()),
        pseudo_claim: render(&template.claim, |i| fills[i].clone()),
        pop: take(SpanLabel::Pop),
        int: take(SpanLabel::Int),
        out: take(SpanLabel::Out),
        positive_abstract_id: abstract_.id.clone(),
        population_tag: abstract_
            .population_tag
            .clone()
            .unwrap_or_else(|| template.population.clone()),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerateReport {
    pub templates: usize,
    pub pairs: usize,
    pub skipped_incompatible: usize,
    pub skipped_repeat: usize,
    /// Templates that got fewer than the requested number of abstracts.
    pub short_templates: usize,
}

/// Up to `per_template` distinct compatible abstracts per template, drawn
/// uniformly with a budget of `DRAW_BUDGET` draws per requested abstract.
/// Template `i` uses its own seed derived from `(seed, i)`.
pub fn generate(
    templates: &[Template],
    evidence: &[EvidenceAbstract],
    per_template: usize,
    seed: u64,
) -> Result<(Vec<PseudoPair>, GenerateReport)> {
    if per_template == 0 {
        return Err(PseudogenError::InvalidRequest("per_template must be at least 1".into()));
    }
    let mut report = GenerateReport {
        templates: templates.len(),
        ..GenerateReport::default()
    };
    let mut pairs = Vec::new();
    if !evidence.is_empty() {
        for (ti, template) in templates.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ti as u64));
            let mut chosen = HashSet::new();
            let mut draws = 0;
            while chosen.len() < per_template && draws < DRAW_BUDGET * per_template {
                draws += 1;
                let idx = rng.gen_range(0..evidence.len());
                let candidate = &evidence[idx];
                if !template.accepts(candidate) {
                    report.skipped_incompatible += 1;
                    continue;
                }
                if !chosen.insert(idx) {
                    report.skipped_repeat += 1;
                    continue;
                }
                let fill_seed = derive_seed(rng.gen(), chosen.len() as u64);
                pairs.push(instantiate(template, candidate, fill_seed)?);
            }
            if chosen.len() < per_template {
                report.short_templates += 1;
            }
        }
    }
    if pairs.is_empty() {
        return Err(PseudogenError::NoCompatibleAbstract);
    }
    report.pairs = pairs.len();
    Ok((pairs, report))
}

/// Templates from every pure claim of the resolved annotation sets. Claims
/// without PIO spans are skipped.
pub fn templates_from_corpus(posts: &[Post], sets: &[AnnotationSet]) -> Vec<Template> {
    let by_post: HashMap<&str, &AnnotationSet> = sets.iter().map(|s| (s.post_id.as_str(), s)).collect();
    let mut out = Vec::new();
    for post in posts {
        let Some(set) = by_post.get(post.id.as_str()) else {
            continue;
        };
        for claim in identify_pure_claims(set) {
            let pio: Vec<Span> = set.pio_within(&claim).copied().collect();
            if let Ok(t) = make_template(post, &claim, &pio) {
                out.push(t);
            }
        }
    }
    out
}

pub fn write_pairs<W: Write>(w: &mut W, pairs: &[PseudoPair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[PseudoPair]) -> Result<()> {
    let path = path.as_ref();
    let io = |source| PseudogenError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    write_pairs(&mut w, pairs).and_then(|_| w.flush()).map_err(io)
}

pub fn parse_pairs(contents: &str) -> Result<Vec<PseudoPair>> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PseudogenError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PseudoPair>> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|source| PseudogenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pairs(&contents)
}
