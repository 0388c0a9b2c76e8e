//! Input loading shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use medclaim::corpus::{
    aggregate_labels, load_annotations, load_evidence, load_posts, split_corpus, AnnotationSet, CorpusSplit,
    EvidenceAbstract, Post,
};
use medclaim::pseudogen::{load_pairs, PseudoPair};
use medclaim::retriever::{load_encoders, EncoderModel, EvidenceIndex};
use medclaim::tagger::{load_bundle, TaggerBundle};

use crate::error::input;
use crate::Ctx;

pub fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(input!("{what} file {} does not exist", path.display()))
    }
}

pub fn posts(ctx: &Ctx) -> anyhow::Result<Vec<Post>> {
    require(&ctx.cfg.paths.posts, "posts")?;
    let posts = load_posts(&ctx.cfg.paths.posts)?;
    if posts.is_empty() {
        return Err(input!("{} contains no posts", ctx.cfg.paths.posts.display()));
    }
    Ok(posts)
}

pub fn annotations(ctx: &Ctx, posts: &[Post]) -> anyhow::Result<Vec<AnnotationSet>> {
    require(&ctx.cfg.paths.annotations, "annotations")?;
    Ok(load_annotations(&ctx.cfg.paths.annotations, posts)?)
}

pub fn evidence(ctx: &Ctx) -> anyhow::Result<Vec<EvidenceAbstract>> {
    require(&ctx.cfg.paths.evidence, "evidence")?;
    let ev = load_evidence(&ctx.cfg.paths.evidence)?;
    if ev.is_empty() {
        return Err(input!("{} contains no abstracts", ctx.cfg.paths.evidence.display()));
    }
    Ok(ev)
}

/// Sets grouped by post id, in file order within each post.
pub fn by_post(sets: &[AnnotationSet]) -> BTreeMap<&str, Vec<&AnnotationSet>> {
    let mut out: BTreeMap<&str, Vec<&AnnotationSet>> = BTreeMap::new();
    for s in sets {
        out.entry(s.post_id.as_str()).or_default().push(s);
    }
    out
}

/// One set per annotated post: the majority aggregate when a post has two or
/// more sets, the set itself when it has one. Output follows post order.
pub fn resolve(posts: &[Post], sets: &[AnnotationSet]) -> anyhow::Result<Vec<AnnotationSet>> {
    let grouped = by_post(sets);
    let mut out = Vec::new();
    for post in posts {
        match grouped.get(post.id.as_str()).map(Vec::as_slice) {
            None | Some([]) => {}
            Some([one]) => out.push((*one).clone()),
            Some(many) => {
                let owned: Vec<AnnotationSet> = many.iter().map(|s| (*s).clone()).collect();
                out.push(aggregate_labels(&owned, post)?);
            }
        }
    }
    Ok(out)
}

/// The current split artifact, or a fresh split when none was stored. A
/// stored split must cover every post.
pub fn split(ctx: &Ctx, posts: &[Post]) -> anyhow::Result<CorpusSplit> {
    if !ctx.work.has("split")? {
        return Ok(split_corpus(posts, ctx.cfg.split_ratios, ctx.cfg.seeds.split)?);
    }
    let path = ctx.work.current("split")?;
    let split: CorpusSplit = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if let Some(p) = posts
        .iter()
        .find(|p| !(split.contains_train(&p.id) || split.contains_dev(&p.id) || split.contains_test(&p.id)))
    {
        return Err(input!(
            "post {} is not in the stored split {}; rerun `split`",
            p.id,
            path.display()
        ));
    }
    Ok(split)
}

pub fn tagger(ctx: &Ctx) -> anyhow::Result<TaggerBundle> {
    Ok(load_bundle(ctx.work.current("tagger")?)?)
}

pub fn encoders(ctx: &Ctx) -> anyhow::Result<(EncoderModel, EncoderModel)> {
    Ok(load_encoders(ctx.work.current("encoders")?)?)
}

pub fn index(ctx: &Ctx) -> anyhow::Result<EvidenceIndex> {
    Ok(EvidenceIndex::load(ctx.work.current("index")?)?)
}

pub fn pairs(ctx: &Ctx, split: &str) -> anyhow::Result<Vec<PseudoPair>> {
    let pairs = load_pairs(ctx.work.current(&format!("pseudo_pairs_{split}"))?)?;
    if pairs.is_empty() {
        return Err(input!("no {split} pseudo pairs; rerun `pseudogen` with more posts"));
    }
    Ok(pairs)
}
