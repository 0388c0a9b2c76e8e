//! Run configuration read from an INI file.
//!
//! Every key is optional. Unknown sections and keys are rejected so that a
//! typo cannot silently fall back to a default. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, Properties};
use medclaim::corpus::{SynthConfig, DEFAULT_RATIOS};
use medclaim::retriever::{RetrieverConfig, DEFAULT_B, DEFAULT_K1, DEFAULT_KS};
use medclaim::tagger::{TaggerConfig, TrainConfig};

use crate::error::input;

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub workdir: PathBuf,
    pub posts: PathBuf,
    pub annotations: PathBuf,
    /// Optional noise-free annotations used as gold by `eval-tagger`.
    pub reference: PathBuf,
    pub evidence: PathBuf,
    pub judgments: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub synth: u64,
    pub split: u64,
    pub tagger: u64,
    pub pseudogen: u64,
    pub retriever: u64,
}

/// Which annotation sets the pseudo-pair templates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSource {
    /// The resolved human annotations.
    Annotations,
    /// Output of the most recent `tag` run.
    Tagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudogenConfig {
    pub per_template: usize,
    pub source: TemplateSource,
    /// Pair caps per split; 0 keeps everything.
    pub max_train: usize,
    pub max_dev: usize,
    pub max_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    pub synth: SynthConfig,
    pub split_ratios: [f64; 3],
    pub tagger: TaggerConfig,
    pub pseudogen: PseudogenConfig,
    pub retriever: RetrieverConfig,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub ks: Vec<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
}

struct Section<'a> {
    name: &'a str,
    props: Option<&'a Properties>,
}

impl Section<'_> {
    fn check_keys(&self, known: &[&str]) -> anyhow::Result<()> {
        if let Some(props) = self.props {
            for (k, _) in props.iter() {
                if !known.contains(&k) {
                    return Err(input!("unknown key `{k}` in section [{}]", self.name));
                }
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| input!("[{}] {key} = {v:?}: {e}", self.name)),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|e| input!("[{}] {key}: bad list item {x:?}: {e}", self.name))
            })
            .collect::<anyhow::Result<Vec<T>>>()
            .map(Some)
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "paths",
        &["workdir", "posts", "annotations", "reference", "evidence", "judgments"],
    ),
    ("seeds", &["seed", "synth", "split", "tagger", "pseudogen", "retriever"]),
    (
        "synth",
        &[
            "n_posts",
            "n_populations",
            "vocab_size",
            "claim_rate",
            "experience_rate",
            "question_rate",
            "overlap_rate",
            "n_abstracts",
            "lexicon_size",
            "n_annotators",
            "annotator_noise",
            "mention_rate",
            "distractor_mentions",
            "single_slot_rate",
            "surface_variation",
        ],
    ),
    ("split", &["ratios"]),
    (
        "tagger",
        &["bucket_count", "l2", "epochs", "step_size", "batch_size", "units"],
    ),
    (
        "pseudogen",
        &["per_template", "source", "max_train", "max_dev", "max_test"],
    ),
    (
        "retriever",
        &[
            "dim",
            "bucket_count",
            "epochs",
            "step_size",
            "gain_step_size",
            "batch_size",
            "ks",
        ],
    ),
    ("bm25", &["k1", "b"]),
];

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let (ini, base) = match path {
            Some(p) => {
                let ini = Ini::load_from_file(p).map_err(|e| input!("{}: {e}", p.display()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (ini, base)
            }
            None => (Ini::new(), PathBuf::new()),
        };
        Self::from_ini(&ini, &base, overrides)
    }

    pub fn from_ini(ini: &Ini, base: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(input!("keys outside a section"));
                }
                continue;
            };
            let Some((_, known)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                return Err(input!("unknown section [{name}]"));
            };
            Section {
                name,
                props: Some(props),
            }
            .check_keys(known)?;
        }
        let section = |name: &'static str| Section {
            name,
            props: ini.section(Some(name)),
        };

        let paths = section("paths");
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let workdir = match &overrides.workdir {
            Some(w) => w.clone(),
            None => resolve(paths.raw("workdir").unwrap_or("work")),
        };
        let file = |key: &str| {
            paths
                .raw(key)
                .map_or_else(|| workdir.join(format!("{key}.jsonl")), resolve)
        };
        let paths = Paths {
            posts: file("posts"),
            annotations: file("annotations"),
            reference: file("reference"),
            evidence: file("evidence"),
            judgments: file("judgments"),
            workdir,
        };

        let seeds = section("seeds");
        let global = match overrides.seed {
            Some(s) => s,
            None => seeds.get("seed", 0u64)?,
        };
        let seeds = Seeds {
            synth: seeds.get("synth", global)?,
            split: seeds.get("split", global)?,
            tagger: seeds.get("tagger", global)?,
            pseudogen: seeds.get("pseudogen", global)?,
            retriever: seeds.get("retriever", global)?,
        };

        let s = section("synth");
        let d = SynthConfig::default();
        let synth = SynthConfig {
            seed: seeds.synth,
            n_posts: s.get("n_posts", d.n_posts)?,
            n_populations: s.get("n_populations", d.n_populations)?,
            vocab_size: s.get("vocab_size", d.vocab_size)?,
            claim_rate: s.get("claim_rate", d.claim_rate)?,
            experience_rate: s.get("experience_rate", d.experience_rate)?,
            question_rate: s.get("question_rate", d.question_rate)?,
            overlap_rate: s.get("overlap_rate", d.overlap_rate)?,
            n_abstracts: s.get("n_abstracts", d.n_abstracts)?,
            lexicon_size: s.get("lexicon_size", d.lexicon_size)?,
            n_annotators: s.get("n_annotators", d.n_annotators)?,
            annotator_noise: s.get("annotator_noise", d.annotator_noise)?,
            mention_rate: s.get("mention_rate", d.mention_rate)?,
            distractor_mentions: s.get("distractor_mentions", d.distractor_mentions)?,
            single_slot_rate: s.get("single_slot_rate", d.single_slot_rate)?,
            surface_variation: s.get("surface_variation", d.surface_variation)?,
        };

        let split_ratios = match section("split").list::<f64>("ratios")? {
            None => DEFAULT_RATIOS,
            Some(v) => v
                .try_into()
                .map_err(|v: Vec<f64>| input!("[split] ratios needs 3 values, got {}", v.len()))?,
        };

        let t = section("tagger");
        let td = TaggerConfig::default();
        let tt = TrainConfig::default();
        let tagger = TaggerConfig {
            bucket_count: t.get("bucket_count", td.bucket_count)?,
            units: t.list("units")?.unwrap_or(td.units),
            train: TrainConfig {
                l2: t.get("l2", tt.l2)?,
                epochs: t.get("epochs", tt.epochs)?,
                step_size: t.get("step_size", tt.step_size)?,
                batch_size: t.get("batch_size", tt.batch_size)?,
                seed: seeds.tagger,
            },
        };

        let p = section("pseudogen");
        let source = match p.raw("source").unwrap_or("annotations") {
            "annotations" => TemplateSource::Annotations,
            "tagged" => TemplateSource::Tagged,
            other => {
                return Err(input!(
                    "[pseudogen] source must be `annotations` or `tagged`, got {other:?}"
                ))
            }
        };
        let pseudogen = PseudogenConfig {
            per_template: p.get("per_template", 1usize)?,
            source,
            max_train: p.get("max_train", 0usize)?,
            max_dev: p.get("max_dev", 0usize)?,
            max_test: p.get("max_test", 0usize)?,
        };

        let r = section("retriever");
        let rd = RetrieverConfig::default();
        let retriever = RetrieverConfig {
            dim: r.get("dim", rd.dim)?,
            bucket_count: r.get("bucket_count", rd.bucket_count)?,
            epochs: r.get("epochs", rd.epochs)?,
            step_size: r.get("step_size", rd.step_size)?,
            gain_step_size: r.get("gain_step_size", rd.gain_step_size)?,
            batch_size: r.get("batch_size", rd.batch_size)?,
            seed: seeds.retriever,
        };
        let ks = r.list("ks")?.unwrap_or_else(|| DEFAULT_KS.to_vec());
        if ks.is_empty() || ks.contains(&0) || ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(input!(
                "[retriever] ks must be positive and strictly ascending, got {ks:?}"
            ));
        }

        let b = section("bm25");
        Ok(Self {
            paths,
            seeds,
            synth,
            split_ratios,
            tagger,
            pseudogen,
            retriever,
            bm25_k1: b.get("k1", DEFAULT_K1)?,
            bm25_b: b.get("b", DEFAULT_B)?,
            ks,
        })
    }
}
