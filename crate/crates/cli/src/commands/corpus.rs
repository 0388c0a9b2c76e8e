use std::fmt::Write as _;
use std::path::PathBuf;

use medclaim::corpus::{
    corpus_stats, identify_pure_claims, label_kappa, save_annotations, save_evidence, save_posts, synth_corpus,
    write_annotations, PrfCounts, SpanLabel,
};
use serde_json::json;

use crate::data;
use crate::error::input;
use crate::Ctx;

fn four(x: f64) -> String {
    format!("{x:.4}")
}

pub fn synth(ctx: &Ctx, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = &ctx.cfg.synth;
    if cfg.n_posts == 0 || cfg.n_abstracts == 0 {
        return Err(input!("[synth] n_posts and n_abstracts must be positive"));
    }
    let corpus = synth_corpus(cfg);
    let dir = out.unwrap_or_else(|| ctx.work.root().to_path_buf());
    std::fs::create_dir_all(&dir)?;
    save_posts(dir.join("posts.jsonl"), &corpus.posts)?;
    save_annotations(dir.join("annotations.jsonl"), &corpus.annotations)?;
    save_annotations(dir.join("reference.jsonl"), &corpus.gold)?;
    save_evidence(dir.join("evidence.jsonl"), &corpus.evidence)?;

    let report = json!({
        "config": cfg,
        "posts": corpus.posts.len(),
        "annotation_sets": corpus.annotations.len(),
        "abstracts": corpus.evidence.len(),
        "gold_pairs": corpus.pairs.len(),
        "populations": corpus.populations,
        "planted": corpus.planted,
    });
    ctx.work.write_report("synth", &report)?;
    println!(
        "wrote {} posts, {} annotation sets and {} abstracts to {}",
        corpus.posts.len(),
        corpus.annotations.len(),
        corpus.evidence.len(),
        dir.display()
    );
    Ok(())
}

pub fn ingest(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let sets = data::annotations(ctx, &posts)?;
    let resolved = data::resolve(&posts, &sets)?;
    let mut annotators: Vec<&str> = sets.iter().map(|s| s.annotator_id.as_str()).collect();
    annotators.sort();
    annotators.dedup();
    let evidence = if ctx.cfg.paths.evidence.exists() {
        Some(data::evidence(ctx)?.len())
    } else {
        None
    };
    let mut bytes = Vec::new();
    write_annotations(&mut bytes, &resolved)?;
    let path = ctx.work.store_file("resolved", "jsonl", &bytes)?;

    let report = json!({
        "posts": posts.len(),
        "tokens": posts.iter().map(|p| p.len()).sum::<usize>(),
        "annotation_sets": sets.len(),
        "annotators": annotators,
        "annotated_posts": resolved.len(),
        "pure_claims": resolved.iter().map(|s| identify_pure_claims(s).len()).sum::<usize>(),
        "abstracts": evidence,
        "resolved": path.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    ctx.work.write_report("ingest", &report)?;
    println!(
        "{} posts, {} annotation sets from {} annotators, {} resolved",
        posts.len(),
        sets.len(),
        annotators.len(),
        resolved.len()
    );
    Ok(())
}

pub fn stats(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let sets = data::annotations(ctx, &posts)?;
    let resolved = data::resolve(&posts, &sets)?;
    let stats = corpus_stats(&posts, &resolved);
    ctx.work.write_report("stats", &stats.to_report())?;
    print!("{}", stats.render_table());
    Ok(())
}

/// Per label: Fleiss kappa over posts rated by the usual number of
/// annotators, and token P/R/F1 of each annotator against the aggregate.
pub fn agree(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let sets = data::annotations(ctx, &posts)?;
    let grouped = data::by_post(&sets);
    let mut rater_counts = std::collections::BTreeMap::<usize, usize>::new();
    for g in grouped.values() {
        *rater_counts.entry(g.len()).or_default() += 1;
    }
    let n_raters = rater_counts
        .iter()
        .filter(|(n, _)| **n >= 2)
        .max_by_key(|(n, c)| (**c, **n))
        .map(|(n, _)| *n)
        .ok_or_else(|| input!("agreement needs posts with at least two annotation sets"))?;
    let resolved = data::resolve(&posts, &sets)?;
    let aggregate: std::collections::HashMap<&str, _> = resolved.iter().map(|s| (s.post_id.as_str(), s)).collect();

    let mut rows = Vec::new();
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<12} {:>7} {:>7} {:>7} {:>7}",
        "label", "kappa", "P", "R", "F1"
    );
    for label in SpanLabel::ALL {
        let kappa = label_kappa(&posts, &sets, label, n_raters).ok();
        let mut counts = PrfCounts::default();
        for (post, group) in &grouped {
            if group.len() < 2 {
                continue;
            }
            for set in group {
                counts.add(PrfCounts::from_sets(set, aggregate[post], label));
            }
        }
        let prf = counts.prf();
        let _ = writeln!(
            table,
            "{:<12} {:>7} {:>7.4} {:>7.4} {:>7.4}",
            label.as_str(),
            kappa.map_or_else(|| "n/a".to_string(), four),
            prf.precision,
            prf.recall,
            prf.f1
        );
        rows.push(json!({
            "label": label.as_str(),
            "kappa": kappa.map(four),
            "precision": four(prf.precision),
            "recall": four(prf.recall),
            "f1": four(prf.f1),
        }));
    }
    ctx.work
        .write_report("agree", &json!({ "raters": n_raters, "labels": rows }))?;
    print!("{table}");
    Ok(())
}

pub fn split(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let split = medclaim::corpus::split_corpus(&posts, ctx.cfg.split_ratios, ctx.cfg.seeds.split)?;
    let mut bytes = serde_json::to_vec_pretty(&split)?;
    bytes.push(b'\n');
    let path = ctx.work.store_file("split", "json", &bytes)?;
    let report = json!({
        "seed": split.seed,
        "ratios": ctx.cfg.split_ratios,
        "train": split.train.len(),
        "dev": split.dev.len(),
        "test": split.test.len(),
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    ctx.work.write_report("split", &report)?;
    println!(
        "train {}  dev {}  test {}",
        split.train.len(),
        split.dev.len(),
        split.test.len()
    );
    Ok(())
}
