use medclaim::corpus::{load_annotations, write_annotations, Post};
use medclaim::tagger::{evaluate_tagger, tag_post, write_crf, TaggerBundle, BUNDLE_FILES};
use serde_json::json;

use crate::data;
use crate::error::input;
use crate::Ctx;

pub fn train(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let sets = data::annotations(ctx, &posts)?;
    let resolved = data::resolve(&posts, &sets)?;
    let split = data::split(ctx, &posts)?;
    let train: Vec<Post> = posts.iter().filter(|p| split.contains_train(&p.id)).cloned().collect();
    if train.is_empty() {
        return Err(input!("the train split is empty"));
    }
    let (bundle, reports) = TaggerBundle::train(&train, &resolved, &ctx.cfg.tagger)?;
    let models = [&bundle.claim, &bundle.experience, &bundle.question, &bundle.pio];
    let mut files = Vec::new();
    for (name, model) in BUNDLE_FILES.iter().zip(models) {
        let mut bytes = Vec::new();
        write_crf(&mut bytes, model)?;
        files.push((*name, bytes));
    }
    let dir = ctx.work.store_dir("tagger", &files)?;

    let mut models = serde_json::Map::new();
    for (name, r) in &reports {
        println!(
            "{name:<12} objective {:.6} -> {:.6}  reverted epochs {}",
            r.objectives.first().copied().unwrap_or(f64::NAN),
            r.objectives.last().copied().unwrap_or(f64::NAN),
            r.reverted.len()
        );
        models.insert(name.clone(), serde_json::to_value(r)?);
    }
    let report = json!({
        "train_posts": train.len(),
        "models": models,
        "artifact": dir.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    ctx.work.write_report("train_tagger", &report)?;
    Ok(())
}

/// Tags every post and writes one `model` annotation set per post.
pub fn tag(ctx: &Ctx, out: Option<std::path::PathBuf>) -> anyhow::Result<()> {
    let bundle = data::tagger(ctx)?;
    let posts = data::posts(ctx)?;
    let tagged: Vec<_> = posts.iter().map(|p| tag_post(&bundle, p)).collect();
    let mut bytes = Vec::new();
    write_annotations(&mut bytes, &tagged)?;
    let path = ctx.work.store_file("tagged", "jsonl", &bytes)?;
    if let Some(out) = &out {
        std::fs::write(out, &bytes)?;
    }
    let spans: usize = tagged.iter().map(|s| s.spans.len()).sum();
    ctx.work.write_report(
        "tag",
        &json!({
            "posts": tagged.len(),
            "spans": spans,
            "artifact": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        }),
    )?;
    println!(
        "tagged {} posts, {spans} spans -> {}",
        tagged.len(),
        out.as_ref().unwrap_or(&path).display()
    );
    Ok(())
}

/// Scores the current tagger on the test split. Gold is the reference file
/// when it exists, otherwise the resolved annotations.
pub fn eval(ctx: &Ctx) -> anyhow::Result<()> {
    let bundle = data::tagger(ctx)?;
    let posts = data::posts(ctx)?;
    let (gold, gold_source) = if ctx.cfg.paths.reference.exists() {
        (load_annotations(&ctx.cfg.paths.reference, &posts)?, "reference")
    } else {
        let sets = data::annotations(ctx, &posts)?;
        (data::resolve(&posts, &sets)?, "annotations")
    };
    let split = data::split(ctx, &posts)?;
    let test: Vec<Post> = posts.iter().filter(|p| split.contains_test(&p.id)).cloned().collect();
    if test.is_empty() {
        return Err(input!("the test split is empty"));
    }
    let eval = evaluate_tagger(&bundle, &test, &gold);
    let mut report = eval.to_report();
    report["gold"] = json!(gold_source);
    report["test_posts"] = json!(test.len());
    ctx.work.write_report("eval_tagger", &report)?;
    print!("{}", eval.render_table());
    Ok(())
}
