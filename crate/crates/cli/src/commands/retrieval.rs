use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use medclaim::corpus::{load_annotations, load_judgments, load_posts, AnnotationSet, Post, Span, SpanLabel};
use medclaim::hashing::derive_seed_str;
use medclaim::pseudogen::{generate, templates_from_corpus, write_pairs, PseudogenError};
use medclaim::retriever::{
    aggregate_judgments, bm25_build, bm25_search, build_context, build_index, cumulative_relevance_table,
    evaluate_ranking, format_run, initial_encoders, pair_context, random_baseline, render_relevance_table,
    train_retriever, EncoderModel, EvidenceIndex, Hit, Qrels, RankedList, RetrieverError, Run, DEFAULT_JUDGE_KS,
};
use medclaim::tagger::{tag_pio, tag_post};
use serde_json::json;

use crate::config::TemplateSource;
use crate::data;
use crate::error::{input, InternalError};
use crate::Ctx;

fn file_name(path: &std::path::Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn pseudogen(ctx: &Ctx) -> anyhow::Result<()> {
    let posts = data::posts(ctx)?;
    let evidence = data::evidence(ctx)?;
    let sets: Vec<AnnotationSet> = match ctx.cfg.pseudogen.source {
        TemplateSource::Annotations => {
            let raw = data::annotations(ctx, &posts)?;
            data::resolve(&posts, &raw)?
        }
        TemplateSource::Tagged => load_annotations(ctx.work.current("tagged")?, &posts)?,
    };
    let split = data::split(ctx, &posts)?;
    let pc = &ctx.cfg.pseudogen;
    let parts: [(&str, usize, fn(&medclaim::corpus::CorpusSplit, &str) -> bool); 3] = [
        ("train", pc.max_train, |s, id| s.contains_train(id)),
        ("dev", pc.max_dev, |s, id| s.contains_dev(id)),
        ("test", pc.max_test, |s, id| s.contains_test(id)),
    ];
    let mut report = serde_json::Map::new();
    for (name, cap, member) in parts {
        let part: Vec<Post> = posts.iter().filter(|p| member(&split, &p.id)).cloned().collect();
        let templates = templates_from_corpus(&part, &sets);
        let seed = derive_seed_str(ctx.cfg.seeds.pseudogen, name);
        let (mut pairs, gen) = match generate(&templates, &evidence, pc.per_template, seed) {
            Ok(x) => x,
            Err(PseudogenError::NoCompatibleAbstract) if name != "train" => Default::default(),
            Err(e) => return Err(anyhow::Error::new(e).context(format!("generating {name} pairs"))),
        };
        if cap > 0 {
            pairs.truncate(cap);
        }
        let mut bytes = Vec::new();
        write_pairs(&mut bytes, &pairs)?;
        let path = ctx.work.store_file(&format!("pseudo_pairs_{name}"), "jsonl", &bytes)?;
        println!("{name:<5} {:>6} templates {:>7} pairs", templates.len(), pairs.len());
        report.insert(
            name.to_string(),
            json!({
                "templates": templates.len(),
                "pairs": pairs.len(),
                "generation": gen,
                "file": file_name(&path),
            }),
        );
    }
    report.insert("per_template".into(), json!(pc.per_template));
    ctx.work.write_report("pseudogen", &serde_json::Value::Object(report))?;
    Ok(())
}

pub fn train(ctx: &Ctx) -> anyhow::Result<()> {
    let pairs = data::pairs(ctx, "train")?;
    let evidence = data::evidence(ctx)?;
    let (enc_c, enc_d, r) = train_retriever(&pairs, &evidence, &ctx.cfg.retriever)?;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    let dir = ctx.work.store_dir(
        "encoders",
        &[("context.denc", enc_c.to_bytes()), ("evidence.denc", enc_d.to_bytes())],
    )?;
    let report = json!({
        "pairs": pairs.len(),
        "initial_loss": r.initial_loss,
        "epoch_losses": r.epoch_losses,
        "batches_per_epoch": r.batches_per_epoch,
        "warnings": r.warnings,
        "context_fingerprint": format!("{:016x}", enc_c.fingerprint()),
        "evidence_fingerprint": format!("{:016x}", enc_d.fingerprint()),
        "artifact": file_name(&dir),
    });
    ctx.work.write_report("train_retriever", &report)?;
    println!(
        "{} pairs, loss {:.4} -> {:.4} over {} epochs",
        pairs.len(),
        r.initial_loss,
        r.epoch_losses.last().copied().unwrap_or(r.initial_loss),
        r.epoch_losses.len()
    );
    Ok(())
}

pub fn index(ctx: &Ctx) -> anyhow::Result<()> {
    let (_, enc_d) = data::encoders(ctx)?;
    let evidence = data::evidence(ctx)?;
    let index = build_index(&enc_d, &evidence)?;
    let mut bytes = Vec::new();
    index.write(&mut bytes)?;
    let path = ctx.work.store_file("index", "derx", &bytes)?;
    ctx.work.write_report(
        "index",
        &json!({
            "abstracts": index.len(),
            "dim": index.dim(),
            "encoder_fingerprint": format!("{:016x}", index.fingerprint()),
            "file": file_name(&path),
        }),
    )?;
    println!(
        "indexed {} abstracts at d={} -> {}",
        index.len(),
        index.dim(),
        path.display()
    );
    Ok(())
}

/// Fails before any work when the index was built by another encoder.
fn check_fingerprint(index: &EvidenceIndex, encoder: &EncoderModel) -> anyhow::Result<()> {
    if index.fingerprint() != encoder.fingerprint() {
        return Err(RetrieverError::FingerprintMismatch {
            index: index.fingerprint(),
            encoder: encoder.fingerprint(),
        }
        .into());
    }
    Ok(())
}

pub struct QueryArgs {
    pub posts: Option<PathBuf>,
    pub post_id: Option<String>,
    pub claim: Option<(usize, usize)>,
    pub k: usize,
}

fn strings(post: &Post, spans: &[Span], label: SpanLabel) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in spans.iter().filter(|s| s.label == label) {
        let text = post.span_text(s.token_start, s.token_end).to_string();
        if !out.contains(&text) {
            out.push(text);
        }
    }
    out
}

/// Ranks abstracts for a given claim span, or for every pure claim the
/// taggers find when no span is given.
pub fn query(ctx: &Ctx, args: QueryArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        return Err(input!("--k must be at least 1"));
    }
    let (enc_c, enc_d) = data::encoders(ctx)?;
    let index = data::index(ctx)?;
    check_fingerprint(&index, &enc_d)?;
    let titles: HashMap<String, String> = if ctx.cfg.paths.evidence.exists() {
        data::evidence(ctx)?.into_iter().map(|a| (a.id, a.title)).collect()
    } else {
        HashMap::new()
    };
    let post_path = args.posts.clone().unwrap_or_else(|| ctx.cfg.paths.posts.clone());
    data::require(&post_path, "posts")?;
    let mut posts = load_posts(&post_path)?;
    if let Some(id) = &args.post_id {
        posts.retain(|p| &p.id == id);
        if posts.is_empty() {
            return Err(input!("post {id} not found in {}", post_path.display()));
        }
    }
    if args.claim.is_some() && posts.len() != 1 {
        return Err(input!("--claim needs a single post; select one with --post-id"));
    }
    let bundle = match (args.claim, ctx.work.has("tagger")?) {
        (None, _) | (Some(_), true) => Some(data::tagger(ctx)?),
        (Some(_), false) => None,
    };

    let mut results = Vec::new();
    let mut table = String::new();
    for post in &posts {
        let claims: Vec<(Span, Vec<Span>)> = match args.claim {
            Some((start, end)) => {
                if start >= end || end > post.len() {
                    return Err(input!(
                        "claim span {start}:{end} is outside post {} ({} tokens)",
                        post.id,
                        post.len()
                    ));
                }
                let claim = Span::new(SpanLabel::Claim, start, end);
                let pio = bundle.as_ref().map(|b| tag_pio(b, post, &claim)).unwrap_or_default();
                vec![(claim, pio)]
            }
            None => {
                let bundle = bundle
                    .as_ref()
                    .ok_or_else(|| InternalError("tagger not loaded".into()))?;
                let set = tag_post(bundle, post);
                medclaim::corpus::identify_pure_claims(&set)
                    .into_iter()
                    .map(|c| (c, set.pio_within(&c).copied().collect()))
                    .collect()
            }
        };
        for (claim, pio) in claims {
            let claim_text = post.span_text(claim.token_start, claim.token_end);
            let context = build_context(
                &post.text,
                claim_text,
                &strings(post, &pio, SpanLabel::Pop),
                &strings(post, &pio, SpanLabel::Int),
                &strings(post, &pio, SpanLabel::Out),
            );
            let claim_id = format!("{}:{}-{}", post.id, claim.token_start, claim.token_end);
            let ranked = index.search_checked(&enc_d, &claim_id, &enc_c.encode(&context), args.k)?;
            let _ = writeln!(table, "{claim_id}  {claim_text}");
            let _ = writeln!(table, "{:>5} {:<16} {:>9}  title", "rank", "abstract", "score");
            for (r, h) in ranked.hits.iter().enumerate() {
                let title: String = titles
                    .get(&h.abstract_id)
                    .map(String::as_str)
                    .unwrap_or("")
                    .chars()
                    .take(60)
                    .collect();
                let _ = writeln!(table, "{:>5} {:<16} {:>9.4}  {title}", r + 1, h.abstract_id, h.score);
            }
            results.push(json!({ "claim_id": claim_id, "claim": claim_text, "context": context, "hits": ranked.hits }));
        }
    }
    ctx.work
        .write_report("query", &json!({ "k": args.k, "queries": results }))?;
    if results.is_empty() {
        println!("no pure claims found");
    }
    print!("{table}");
    Ok(())
}

/// Trained encoders against the untrained encoders, BM25 and a random
/// ranking, on the held-out pseudo pairs.
pub fn eval(ctx: &Ctx) -> anyhow::Result<()> {
    let test = data::pairs(ctx, "test")?;
    let evidence = data::evidence(ctx)?;
    let (enc_c, enc_d) = data::encoders(ctx)?;
    let index = data::index(ctx)?;
    check_fingerprint(&index, &enc_d)?;
    let ks = &ctx.cfg.ks;
    let k = *ks.last().ok_or_else(|| InternalError("empty ks".into()))?;
    let qids: Vec<String> = (0..test.len()).map(|i| format!("q{i:05}")).collect();
    let qrels: Qrels = qids
        .iter()
        .zip(&test)
        .map(|(q, p)| (q.clone(), [p.positive_abstract_id.clone()].into()))
        .collect();
    let contexts: Vec<String> = test.iter().map(pair_context).collect();

    let mut trained = Run::new();
    for (q, c) in qids.iter().zip(&contexts) {
        trained.insert(q.clone(), index.search_checked(&enc_d, q, &enc_c.encode(c), k)?);
    }
    let (init_c, init_d) = initial_encoders(&evidence, &ctx.cfg.retriever)?;
    let init_index = build_index(&init_d, &evidence)?;
    let mut untrained = Run::new();
    for (q, c) in qids.iter().zip(&contexts) {
        untrained.insert(q.clone(), init_index.search(q, &init_c.encode(c), k)?);
    }
    let bm25 = bm25_build(&evidence, ctx.cfg.bm25_k1, ctx.cfg.bm25_b)?;
    let mut lexical = Run::new();
    for (q, c) in qids.iter().zip(&contexts) {
        lexical.insert(q.clone(), bm25_search(&bm25, q, c, k)?);
    }
    let ids: Vec<String> = evidence.iter().map(|a| a.id.clone()).collect();
    let random = random_baseline(&ids, &qids, k, ctx.cfg.seeds.retriever);

    let mut models = serde_json::Map::new();
    let mut table = String::new();
    for (name, run) in [
        ("trained", &trained),
        ("untrained", &untrained),
        ("bm25", &lexical),
        ("random", &random),
    ] {
        let r = evaluate_ranking(run, &qrels, ks)?;
        table.push_str(&r.render_table(name));
        models.insert(name.to_string(), r.to_report());
    }
    let run_path = ctx.work.store_file("run", "tsv", format_run(&trained).as_bytes())?;
    let report = json!({
        "queries": test.len(),
        "abstracts": evidence.len(),
        "encoder_fingerprint": format!("{:016x}", index.fingerprint()),
        "models": models,
        "run": file_name(&run_path),
    });
    ctx.work.write_report("eval_retrieval", &report)?;
    print!("{table}");
    Ok(())
}

/// Reads `claim_id abstract_id rank score` lines written by `format_run`.
pub fn parse_run(text: &str) -> anyhow::Result<Run> {
    let mut rows: std::collections::BTreeMap<String, Vec<(usize, Hit)>> = Default::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || input!("run line {}: expected `claim abstract rank score`", i + 1);
        if f.len() != 4 {
            return Err(bad());
        }
        let rank: usize = f[2].parse().map_err(|_| bad())?;
        let score: f64 = f[3].parse().map_err(|_| bad())?;
        rows.entry(f[0].to_string()).or_default().push((
            rank,
            Hit {
                abstract_id: f[1].to_string(),
                score,
            },
        ));
    }
    Ok(rows
        .into_iter()
        .map(|(claim_id, mut hits)| {
            hits.sort_by_key(|(r, _)| *r);
            let hits: Vec<Hit> = hits.into_iter().map(|(_, h)| h).collect();
            let list = RankedList {
                claim_id: claim_id.clone(),
                k: hits.len(),
                hits,
            };
            (claim_id, list)
        })
        .collect())
}

pub fn judge_report(ctx: &Ctx, run: Option<PathBuf>) -> anyhow::Result<()> {
    data::require(&ctx.cfg.paths.judgments, "judgments")?;
    let judgments = load_judgments(&ctx.cfg.paths.judgments)?;
    if judgments.is_empty() {
        return Err(input!("{} contains no judgments", ctx.cfg.paths.judgments.display()));
    }
    let summary = aggregate_judgments(&judgments)?;
    let run_path = match run {
        Some(p) => Some(p),
        None if ctx.work.has("run")? => Some(ctx.work.current("run")?),
        None => None,
    };
    let rows = match &run_path {
        Some(p) => {
            data::require(p, "run")?;
            let run = parse_run(&std::fs::read_to_string(p)?)?;
            Some(cumulative_relevance_table(&run, &summary.grades, &DEFAULT_JUDGE_KS))
        }
        None => None,
    };
    let mut report = serde_json::to_value(&summary)?;
    report["cumulative"] = json!(rows);
    ctx.work.write_report("judge_report", &report)?;
    if let Some(rows) = &rows {
        print!("{}", render_relevance_table(rows));
    }
    println!(
        "items {}  ties {}  all agree {:.2}%  none agree {:.2}%  kappa {}",
        summary.items,
        summary.ties,
        summary.all_agree_pct,
        summary.none_agree_pct,
        summary.kappa.map_or_else(|| "n/a".to_string(), |k| format!("{k:.4}"))
    );
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    Ok(())
}
