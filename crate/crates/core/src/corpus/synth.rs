//! Deterministic synthetic corpus: posts with planted claim, experience and
//! question spans, PIO sub-spans on pure claims, noisy annotator copies and
//! an evidence database whose abstracts supply every claim's PIO strings.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationSet, EvidenceAbstract, PopulationInfo, Post, PrevalenceClass, Span, SpanLabel};
use crate::hashing::derive_seed_str;

pub const REFERENCE_ID: &str = "reference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_posts: usize,
    pub n_populations: usize,
    /// Size of the shared filler vocabulary used by posts and abstracts.
    pub vocab_size: usize,
    /// Probability that a post contains a claim sentence.
    pub claim_rate: f64,
    pub experience_rate: f64,
    pub question_rate: f64,
    /// Probability of a sentence that is an experience with an embedded claim.
    pub overlap_rate: f64,
    pub n_abstracts: usize,
    /// Phrases per population for each of POP, INT and OUT.
    pub lexicon_size: usize,
    pub n_annotators: usize,
    /// Probability that a gold span is dropped or shrunk by one annotator.
    pub annotator_noise: f64,
    /// Probability that an experience sentence names an (unannotated) entity.
    pub mention_rate: f64,
    /// Entities of other trials mentioned in each abstract body.
    pub distractor_mentions: usize,
    /// Probability that a claim keeps only its first PIO slot.
    pub single_slot_rate: f64,
    /// Probability that an entity word in abstract prose appears in an
    /// inflected form instead of the form listed in the PIO lists.
    pub surface_variation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_posts: 200,
            n_populations: 8,
            vocab_size: 600,
            claim_rate: 0.7,
            experience_rate: 0.6,
            question_rate: 0.5,
            overlap_rate: 0.15,
            n_abstracts: 400,
            lexicon_size: 12,
            n_annotators: 3,
            annotator_noise: 0.1,
            mention_rate: 0.1,
            distractor_mentions: 3,
            single_slot_rate: 0.1,
            surface_variation: 0.0,
        }
    }
}

/// A pure claim and the abstract whose PIO lists supplied its PIO strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub post_id: String,
    pub claim: Span,
    pub abstract_id: String,
}

/// Counts recorded while generating, for checking statistics code.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCounts {
    pub posts: usize,
    pub tokens: usize,
    pub claims: usize,
    pub experiences: usize,
    pub questions: usize,
    pub pop: usize,
    pub int: usize,
    pub out: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub populations: Vec<PopulationInfo>,
    pub posts: Vec<Post>,
    /// `n_annotators` noisy sets per post, in post order.
    pub annotations: Vec<AnnotationSet>,
    /// Noise-free reference set per post.
    pub gold: Vec<AnnotationSet>,
    pub evidence: Vec<EvidenceAbstract>,
    pub pairs: Vec<GoldPair>,
    pub planted: BTreeMap<String, PlantedCounts>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const CLAIM_CUES: &[&str] = &[
    "i read that",
    "studies show that",
    "apparently",
    "my doctor said",
    "research suggests",
    "it is known that",
];
const EXPERIENCE_CUES: &[&str] = &[
    "i have been taking",
    "last year i tried",
    "my mom started",
    "we switched to",
    "i was put on",
];
const QUESTION_CUES: &[&str] = &[
    "does anyone know if",
    "has anyone tried",
    "is it normal that",
    "what do you think about",
    "should i ask about",
];
const CONNECTORS: &[&str] = &[
    "causes",
    "can cause",
    "leads to",
    "is linked to",
    "reduces",
    "worsens",
    "prevents",
];
const DOSES: &[&str] = &["5mg", "10mg", "20mg", "50mg", "100mg", "250mcg", "1000iu"];
const FIXED: &[&str] = &[
    "and",
    "in",
    "people",
    "with",
    "could",
    "be",
    "due",
    "to",
    "is",
    "common",
    "helps",
    "the",
    "best",
    "treatment",
    "for",
    "should",
    "avoid",
    "we",
    "randomized",
    "or",
    "placebo",
    "versus",
    "trial",
    "of",
    "outcome",
    "primary",
    "secondary",
    "participants",
    "compared",
    "previous",
    "reports",
];

#[derive(Clone, Copy)]
enum Piece<'a> {
    Word(&'a str),
    Slot(SpanLabel),
}

struct Lexicon {
    by_kind: [Vec<String>; 3],
}

impl Lexicon {
    fn get(&self, kind: SpanLabel) -> &[String] {
        &self.by_kind[kind_index(kind)]
    }
}

fn kind_index(kind: SpanLabel) -> usize {
    match kind {
        SpanLabel::Pop => 0,
        SpanLabel::Int => 1,
        SpanLabel::Out => 2,
        _ => unreachable!("not a PIO kind"),
    }
}

struct World {
    populations: Vec<PopulationInfo>,
    lexicons: Vec<Lexicon>,
    filler: Vec<String>,
    zipf: WeightedIndex<f64>,
}

struct WordFactory {
    used: HashSet<String>,
}

impl WordFactory {
    fn new() -> Self {
        let mut used = HashSet::new();
        for list in [CLAIM_CUES, EXPERIENCE_CUES, QUESTION_CUES, CONNECTORS, FIXED] {
            for phrase in list {
                used.extend(phrase.split(' ').map(str::to_string));
            }
        }
        Self { used }
    }

    fn next(&mut self, rng: &mut impl Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, rng: &mut impl Rng, words: usize) -> String {
        (0..words).map(|_| self.next(rng)).collect::<Vec<_>>().join(" ")
    }
}

fn build_world(cfg: &SynthConfig) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "world"));
    let mut words = WordFactory::new();
    let classes = [
        PrevalenceClass::VeryCommon,
        PrevalenceClass::Common,
        PrevalenceClass::Rare,
    ];
    let populations = (0..cfg.n_populations.max(1))
        .map(|i| PopulationInfo {
            name: words.next(&mut rng),
            prevalence_class: classes[i % 3],
        })
        .collect();
    let lexicons = (0..cfg.n_populations.max(1))
        .map(|_| {
            let pops = (0..cfg.lexicon_size).map(|_| {
                let n = rng.gen_range(1..=2);
                words.phrase(&mut rng, n)
            });
            let pops = pops.collect();
            let ints = (0..cfg.lexicon_size)
                .map(|_| {
                    let n = rng.gen_range(1..=2);
                    let mut p = words.phrase(&mut rng, n);
                    if rng.gen_bool(0.2) {
                        p.push(' ');
                        p.push_str(DOSES[rng.gen_range(0..DOSES.len())]);
                    }
                    p
                })
                .collect();
            let outs = (0..cfg.lexicon_size)
                .map(|_| {
                    let n = rng.gen_range(2..=3);
                    words.phrase(&mut rng, n)
                })
                .collect();
            Lexicon {
                by_kind: [pops, ints, outs],
            }
        })
        .collect();
    let filler: Vec<String> = (0..cfg.vocab_size.max(1)).map(|_| words.next(&mut rng)).collect();
    let zipf = WeightedIndex::new((0..filler.len()).map(|r| 1.0 / (r as f64 + 1.0))).expect("non-empty vocabulary");
    World {
        populations,
        lexicons,
        filler,
        zipf,
    }
}

impl World {
    fn filler_word(&self, rng: &mut impl Rng) -> &str {
        &self.filler[self.zipf.sample(rng)]
    }

    fn filler_words(&self, rng: &mut impl Rng, lo: usize, hi: usize) -> Vec<&str> {
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| self.filler_word(rng)).collect()
    }
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn distinct_sample(rng: &mut impl Rng, items: &[String], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi).min(items.len());
    items.choose_multiple(rng, n).cloned().collect()
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn words_of(s: &str) -> impl Iterator<Item = &str> {
    s.split(' ')
}

fn render_sentence(words: &[String], punct: char) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        if i == 0 {
            s.push_str(&capitalize(w));
        } else {
            s.push_str(w);
        }
    }
    s.push(punct);
    s
}

const SUFFIXES: &[&str] = &["s", "al", "ic", "ia", "ine"];

/// The word's inflected form; words with digits are left alone.
fn inflect(word: &str) -> String {
    if word.chars().any(|c| c.is_ascii_digit()) {
        return word.to_string();
    }
    let suffix = SUFFIXES[(crate::hashing::hash_str(word) % SUFFIXES.len() as u64) as usize];
    format!("{word}{suffix}")
}

/// Words of an entity phrase as written in one abstract's prose; `forms`
/// keeps each word's form fixed within the abstract. No random draws happen
/// when variation is off, so such corpora do not depend on this step.
fn prose_words(rng: &mut impl Rng, phrase: &str, variation: f64, forms: &mut BTreeMap<String, String>) -> Vec<String> {
    words_of(phrase)
        .filter(|w| !w.is_empty())
        .map(|w| {
            if variation <= 0.0 {
                return w.to_string();
            }
            forms
                .entry(w.to_string())
                .or_insert_with(|| {
                    if rng.gen_bool(variation.min(1.0)) {
                        inflect(w)
                    } else {
                        w.to_string()
                    }
                })
                .clone()
        })
        .collect()
}

fn build_evidence(cfg: &SynthConfig, world: &World) -> Vec<EvidenceAbstract> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "evidence"));
    let var = cfg.surface_variation;
    let width = cfg.n_abstracts.max(1).to_string().len().max(4);
    (0..cfg.n_abstracts)
        .map(|i| {
            let pi = i % world.populations.len();
            let lex = &world.lexicons[pi];
            let populations = distinct_sample(&mut rng, lex.get(SpanLabel::Pop), 1, 2);
            let interventions = distinct_sample(&mut rng, lex.get(SpanLabel::Int), 1, 2);
            let outcomes = distinct_sample(&mut rng, lex.get(SpanLabel::Out), 1, 2);
            let mut forms = BTreeMap::new();
            let mut prose = |rng: &mut ChaCha8Rng, phrases: &[String], sep: &str| {
                phrases
                    .iter()
                    .map(|p| prose_words(rng, p, var, &mut forms).join(" "))
                    .collect::<Vec<_>>()
                    .join(sep)
            };
            let title = format!(
                "{} versus placebo for {} in {}",
                prose(&mut rng, &interventions[..1], ""),
                prose(&mut rng, &outcomes[..1], ""),
                prose(&mut rng, &populations[..1], "")
            );
            let randomized = format!(
                "we randomized {} to {} or placebo",
                prose(&mut rng, &populations, " and "),
                prose(&mut rng, &interventions, " or ")
            );
            let mut sentences = vec![render_sentence(
                &randomized.split(' ').map(str::to_string).collect::<Vec<_>>(),
                '.',
            )];
            let mut mention = |rng: &mut ChaCha8Rng, phrase: &str, lead: &str| {
                let mut w: Vec<String> = world.filler_words(rng, 3, 8).into_iter().map(str::to_string).collect();
                let at = rng.gen_range(0..=w.len());
                let mut inserted: Vec<String> = words_of(lead).map(str::to_string).collect();
                inserted.extend(prose_words(rng, phrase, var, &mut forms));
                inserted.retain(|s| !s.is_empty());
                w.splice(at..at, inserted);
                sentences.push(render_sentence(&w, '.'));
            };
            for o in &outcomes {
                mention(&mut rng, o, "primary outcome");
            }
            for o in interventions.iter().chain(&populations) {
                mention(&mut rng, o, "");
            }
            for _ in 0..cfg.distractor_mentions {
                let kind = *pick(&mut rng, &SpanLabel::PIO);
                let phrase = pick(&mut rng, lex.get(kind)).clone();
                mention(&mut rng, &phrase, "previous reports of");
            }
            for _ in 0..rng.gen_range(2..=4) {
                let w: Vec<String> = world
                    .filler_words(&mut rng, 6, 14)
                    .into_iter()
                    .map(str::to_string)
                    .collect();
                sentences.push(render_sentence(&w, '.'));
            }
            let (head, rest) = sentences.split_at_mut(1);
            rest.shuffle(&mut rng);
            let text = head.iter().chain(rest.iter()).cloned().collect::<Vec<_>>().join(" ");
            EvidenceAbstract {
                id: format!("A{:0width$}", i, width = width),
                title,
                text,
                populations,
                interventions,
                outcomes,
                population_tag: Some(world.populations[pi].name.clone()),
            }
        })
        .collect()
}

fn claim_body(rng: &mut impl Rng, single_slot_rate: f64) -> Vec<Piece<'static>> {
    use Piece::{Slot, Word};
    use SpanLabel::{Int, Out, Pop};
    let conn = *pick(rng, CONNECTORS);
    let mut body: Vec<Piece<'static>> = match rng.gen_range(0..8) {
        0 | 1 => vec![Slot(Int), Word(conn), Slot(Out)],
        2 | 3 => vec![Slot(Int), Word(conn), Slot(Out), Word("in people with"), Slot(Pop)],
        4 => vec![Slot(Out), Word("could be due to"), Slot(Pop)],
        5 => vec![Slot(Int), Word("is the best treatment for"), Slot(Pop)],
        6 => vec![Slot(Int), Word("helps with"), Slot(Out)],
        _ => vec![Slot(Pop), Word("should avoid"), Slot(Int)],
    };
    if rng.gen_bool(single_slot_rate) {
        body.truncate(1);
        body.push(Word("is common"));
    }
    body
}

struct PostBuilder {
    words: Vec<String>,
    gold: Vec<Span>,
    sentences: Vec<String>,
}

impl PostBuilder {
    fn sentence(&mut self, words: Vec<String>, punct: char) -> (usize, usize) {
        let start = self.words.len();
        let end = start + words.len();
        self.sentences.push(render_sentence(&words, punct));
        self.words.extend(words);
        self.words.push(punct.to_string());
        (start, end)
    }
}

/// Generates the corpus for `cfg`. Identical configurations produce identical
/// output.
pub fn synth_corpus(cfg: &SynthConfig) -> SynthCorpus {
    let world = build_world(cfg);
    let evidence = build_evidence(cfg, &world);
    let mut by_population: Vec<Vec<usize>> = vec![Vec::new(); world.populations.len()];
    for (i, a) in evidence.iter().enumerate() {
        by_population[i % world.populations.len()].push(i);
        debug_assert_eq!(
            a.population_tag.as_deref(),
            Some(world.populations[i % world.populations.len()].name.as_str())
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "posts"));
    let weights = WeightedIndex::new(world.populations.iter().map(|p| match p.prevalence_class {
        PrevalenceClass::VeryCommon => 3.0,
        PrevalenceClass::Common => 2.0,
        PrevalenceClass::Rare => 1.0,
    }))
    .expect("populations");

    let width = cfg.n_posts.max(1).to_string().len().max(4);
    let mut posts = Vec::with_capacity(cfg.n_posts);
    let mut gold_sets = Vec::with_capacity(cfg.n_posts);
    let mut pairs = Vec::new();
    let mut planted: BTreeMap<String, PlantedCounts> = BTreeMap::new();

    for n in 0..cfg.n_posts {
        let pi = weights.sample(&mut rng);
        let population = &world.populations[pi];
        let lex = &world.lexicons[pi];
        let post_id = format!("P{:0width$}", n, width = width);

        #[derive(Clone, Copy)]
        enum Kind {
            Claim,
            Experience,
            Question,
            Mixed,
            Filler,
        }
        let mut kinds = Vec::new();
        if cfg.claim_rate > 0.0 && rng.gen_bool(cfg.claim_rate.min(1.0)) {
            kinds.push(Kind::Claim);
            if rng.gen_bool((cfg.claim_rate * 0.25).min(1.0)) {
                kinds.push(Kind::Claim);
            }
        }
        if rng.gen_bool(cfg.experience_rate.clamp(0.0, 1.0)) {
            kinds.push(Kind::Experience);
        }
        if rng.gen_bool(cfg.question_rate.clamp(0.0, 1.0)) {
            kinds.push(Kind::Question);
        }
        if cfg.claim_rate > 0.0 && rng.gen_bool(cfg.overlap_rate.clamp(0.0, 1.0)) {
            kinds.push(Kind::Mixed);
        }
        for _ in 0..rng.gen_range(1..=4) {
            kinds.push(Kind::Filler);
        }
        kinds.shuffle(&mut rng);

        let mut b = PostBuilder {
            words: Vec::new(),
            gold: Vec::new(),
            sentences: Vec::new(),
        };
        let mut claims_with_source = Vec::new();
        let filler = |rng: &mut ChaCha8Rng, lo, hi| -> Vec<String> {
            world
                .filler_words(rng, lo, hi)
                .into_iter()
                .map(str::to_string)
                .collect()
        };
        for kind in kinds {
            match kind {
                Kind::Filler => {
                    let w = filler(&mut rng, 5, 12);
                    b.sentence(w, '.');
                }
                Kind::Question => {
                    let mut w: Vec<String> = words_of(pick(&mut rng, QUESTION_CUES)).map(str::to_string).collect();
                    w.extend(filler(&mut rng, 3, 8));
                    let (s, e) = b.sentence(w, '?');
                    b.gold.push(Span::new(SpanLabel::Question, s, e));
                }
                Kind::Experience => {
                    let mut w: Vec<String> = words_of(pick(&mut rng, EXPERIENCE_CUES)).map(str::to_string).collect();
                    w.extend(filler(&mut rng, 4, 9));
                    if rng.gen_bool(cfg.mention_rate.clamp(0.0, 1.0)) {
                        w.push("with".into());
                        let kind = *pick(&mut rng, &SpanLabel::PIO);
                        w.extend(words_of(pick(&mut rng, lex.get(kind))).map(str::to_string));
                    }
                    let (s, e) = b.sentence(w, '.');
                    b.gold.push(Span::new(SpanLabel::Experience, s, e));
                }
                Kind::Mixed => {
                    let mut w: Vec<String> = words_of(pick(&mut rng, EXPERIENCE_CUES)).map(str::to_string).collect();
                    w.extend(filler(&mut rng, 2, 5));
                    w.push("and".into());
                    let claim_at = w.len();
                    w.extend(words_of(pick(&mut rng, CLAIM_CUES)).map(str::to_string));
                    w.extend(filler(&mut rng, 1, 3));
                    w.extend(words_of(pick(&mut rng, CONNECTORS)).map(str::to_string));
                    w.extend(filler(&mut rng, 2, 4));
                    let (s, e) = b.sentence(w, '.');
                    b.gold.push(Span::new(SpanLabel::Experience, s, e));
                    b.gold.push(Span::new(SpanLabel::Claim, s + claim_at, e));
                }
                Kind::Claim => {
                    let source = by_population[pi][rng.gen_range(0..by_population[pi].len())];
                    let ab = &evidence[source];
                    let mut w: Vec<String> = words_of(pick(&mut rng, CLAIM_CUES)).map(str::to_string).collect();
                    let base = b.words.len();
                    let mut pio = Vec::new();
                    for piece in claim_body(&mut rng, cfg.single_slot_rate) {
                        if rng.gen_bool(0.3) {
                            w.extend(filler(&mut rng, 1, 2));
                        }
                        match piece {
                            Piece::Word(s) => w.extend(words_of(s).map(str::to_string)),
                            Piece::Slot(kind) => {
                                let phrase = pick(&mut rng, ab.elements(kind));
                                let start = base + w.len();
                                w.extend(words_of(phrase).map(str::to_string));
                                pio.push(Span::new(kind, start, base + w.len()));
                            }
                        }
                    }
                    let (s, e) = b.sentence(w, '.');
                    let claim = Span::new(SpanLabel::Claim, s, e);
                    b.gold.push(claim);
                    b.gold.extend(pio);
                    claims_with_source.push((claim, ab.id.clone()));
                }
            }
        }
        let text = b.sentences.join(" ");
        let post = Post::new(post_id.clone(), population.name.clone(), text);
        debug_assert_eq!(post.len(), b.words.len(), "token bookkeeping for {post_id}");

        let mut gold = AnnotationSet::new(post_id.clone(), REFERENCE_ID, b.gold);
        gold.spans.sort();
        let counts = planted.entry(population.name.clone()).or_default();
        counts.posts += 1;
        counts.tokens += post.len();
        for s in &gold.spans {
            match s.label {
                SpanLabel::Claim => counts.claims += 1,
                SpanLabel::Experience => counts.experiences += 1,
                SpanLabel::Question => counts.questions += 1,
                SpanLabel::Pop => counts.pop += 1,
                SpanLabel::Int => counts.int += 1,
                SpanLabel::Out => counts.out += 1,
            }
        }
        // Only pure claims carry PIO spans, and every Claim-kind sentence is pure.
        for (claim, abstract_id) in claims_with_source {
            pairs.push(GoldPair {
                post_id: post_id.clone(),
                claim,
                abstract_id,
            });
        }
        posts.push(post);
        gold_sets.push(gold);
    }

    let annotations = noisy_copies(cfg, &gold_sets);
    SynthCorpus {
        populations: world.populations,
        posts,
        annotations,
        gold: gold_sets,
        evidence,
        pairs,
        planted,
    }
}

/// Each gold span is perturbed (dropped or shrunk by a token) for at most one
/// annotator, so a strict majority of three or more recovers the gold set.
fn noisy_copies(cfg: &SynthConfig, gold: &[AnnotationSet]) -> Vec<AnnotationSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "annotators"));
    let n = cfg.n_annotators.max(1);
    let mut out = Vec::with_capacity(gold.len() * n);
    for g in gold {
        let mut sets: Vec<AnnotationSet> = (0..n)
            .map(|r| AnnotationSet::new(g.post_id.clone(), format!("a{}", r + 1), Vec::new()))
            .collect();
        for span in &g.spans {
            let victim = (n >= 3 && rng.gen_bool(cfg.annotator_noise.clamp(0.0, 1.0))).then(|| rng.gen_range(0..n));
            for (r, set) in sets.iter_mut().enumerate() {
                if Some(r) != victim {
                    set.spans.push(*span);
                } else if span.len() >= 2 && rng.gen_bool(0.7) {
                    let shrunk = if rng.gen_bool(0.5) {
                        Span::new(span.label, span.token_start + 1, span.token_end)
                    } else {
                        Span::new(span.label, span.token_start, span.token_end - 1)
                    };
                    set.spans.push(shrunk);
                }
            }
        }
        out.extend(sets);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        aggregate_labels, corpus_stats, identify_pure_claims, write_annotations, write_evidence, write_posts,
    };

    fn small() -> SynthConfig {
        SynthConfig {
            n_posts: 200,
            ..SynthConfig::default()
        }
    }

    fn serialize(c: &SynthCorpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_posts(&mut buf, &c.posts).unwrap();
        write_annotations(&mut buf, &c.annotations).unwrap();
        write_evidence(&mut buf, &c.evidence).unwrap();
        buf
    }

    #[test]
    fn deterministic() {
        assert_eq!(serialize(&synth_corpus(&small())), serialize(&synth_corpus(&small())));
        let other = SynthConfig { seed: 2, ..small() };
        assert_ne!(serialize(&synth_corpus(&small())), serialize(&synth_corpus(&other)));
    }

    #[test]
    fn zero_claim_rate() {
        let c = synth_corpus(&SynthConfig {
            claim_rate: 0.0,
            ..small()
        });
        assert!(c.gold.iter().all(|g| g.spans_with(SpanLabel::Claim).next().is_none()));
        assert!(c.pairs.is_empty());
    }

    #[test]
    fn annotations_are_valid_and_aggregate_to_gold() {
        let c = synth_corpus(&small());
        for (i, post) in c.posts.iter().enumerate() {
            let gold = &c.gold[i];
            gold.validate(post.len()).unwrap();
            let sets = &c.annotations[i * 3..i * 3 + 3];
            for s in sets {
                s.validate(post.len()).unwrap();
            }
            let agg = aggregate_labels(sets, post).unwrap();
            assert_eq!(agg.spans, gold.spans, "post {}", post.id);
        }
    }

    #[test]
    fn gold_pairs_satisfy_containment() {
        let c = synth_corpus(&small());
        let post_idx: BTreeMap<&str, usize> = c.posts.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        assert!(!c.pairs.is_empty());
        for pair in &c.pairs {
            let i = post_idx[pair.post_id.as_str()];
            let (post, gold) = (&c.posts[i], &c.gold[i]);
            assert!(identify_pure_claims(gold).contains(&pair.claim));
            let ab = c.evidence.iter().find(|a| a.id == pair.abstract_id).unwrap();
            let pios: Vec<_> = gold.pio_within(&pair.claim).collect();
            assert!(!pios.is_empty());
            for pio in pios {
                let surface = post.span_text(pio.token_start, pio.token_end);
                assert!(ab.elements(pio.label).iter().any(|s| s == surface), "{surface}");
                assert!(post.text.contains(surface));
            }
        }
    }

    #[test]
    fn planted_counts_match_stats() {
        let c = synth_corpus(&small());
        let stats = corpus_stats(&c.posts, &c.gold);
        for (pop, counts) in &c.planted {
            let row = stats.population(pop).unwrap();
            assert_eq!(row.posts, counts.posts);
            assert_eq!(row.tokens, counts.tokens);
            assert_eq!(row.claims, counts.claims);
            assert_eq!(row.questions, counts.questions);
            assert_eq!(row.experiences, counts.experiences);
            assert_eq!(row.pop_in_claims, counts.pop);
            assert_eq!(row.int_in_claims, counts.int);
            assert_eq!(row.out_in_claims, counts.out);
        }
    }

    #[test]
    fn planted_overlap_present() {
        let c = synth_corpus(&small());
        let overlapping = c.gold.iter().any(|g| {
            g.spans_with(SpanLabel::Claim)
                .any(|cl| g.spans_with(SpanLabel::Experience).any(|e| e.overlaps(cl)))
        });
        assert!(overlapping);
    }
}
