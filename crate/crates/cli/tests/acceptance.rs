//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero when any criterion fails.
//!
//! Built with `harness = false` so the report lines are always visible under
//! `cargo test`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use medclaim::corpus::{
    aggregate_labels, fleiss_kappa, split_corpus, synth_corpus, AnnotationSet, EvidenceAbstract, Grade, Judgment, Post,
    SpanLabel, SynthConfig, DEFAULT_RATIOS,
};
use medclaim::pseudogen::{generate, save_pairs, templates_from_corpus, PseudoPair};
use medclaim::retriever::{
    aggregate_judgments, batch_loss_and_gradients, bm25_build, bm25_search, build_index, evaluate_ranking,
    pair_context, random_baseline, train_retriever, EncoderModel, EvidenceIndex, Hit, PrecisionConvention, Qrels,
    RankedList, RankingReport, RetrieverConfig, Run, SparseFeatures, GAIN_GROUPS,
};
use medclaim::tagger::{
    crf_nll_and_gradient, evaluate_tagger, log_partition, viterbi_decode, CrfModel, FeatureVector, TagSet,
    TaggerBundle, TaggerConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

// ---------------------------------------------------------------- CRF

const CRF_BUCKETS: usize = 8;

fn random_crf(rng: &mut ChaCha8Rng, tag_set: TagSet, scale: f64) -> CrfModel {
    let mut m = CrfModel::zeros(tag_set, CRF_BUCKETS, 0.0, Vec::new());
    for w in m
        .unary
        .iter_mut()
        .chain(&mut m.transition)
        .chain(&mut m.start)
        .chain(&mut m.end)
    {
        *w = rng.gen_range(-scale..scale);
    }
    m
}

fn random_crf_feats(rng: &mut ChaCha8Rng, len: usize) -> Vec<FeatureVector> {
    (0..len)
        .map(|_| {
            let n = rng.gen_range(1..4);
            FeatureVector::from_buckets((0..n).map(|_| rng.gen_range(0..CRF_BUCKETS as u32)).collect())
        })
        .collect()
}

fn sequences(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |y| {
                    let mut t = s.clone();
                    t.push(y);
                    t
                })
            })
            .collect();
    }
    out
}

/// Sequence score summed straight from the weight arrays.
fn direct_score(m: &CrfModel, feats: &[FeatureVector], tags: &[usize]) -> f64 {
    let k = m.num_labels();
    let mut s = m.start[tags[0]] + m.end[tags[tags.len() - 1]];
    for (t, fv) in feats.iter().enumerate() {
        for &b in fv.buckets() {
            s += m.unary[b as usize * k + tags[t]];
        }
        if t > 0 {
            s += m.transition[tags[t - 1] * k + tags[t]];
        }
    }
    s
}

fn crf_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for fixture in 0..200 {
        let tag_set = if fixture % 4 == 0 {
            TagSet::new(Vec::new())
        } else {
            TagSet::binary(SpanLabel::ALL[fixture % 6])
        };
        let k = tag_set.len();
        let m = random_crf(&mut rng, tag_set, 2.0);
        let len = rng.gen_range(1..=8);
        let f = random_crf_feats(&mut rng, len);
        let all = sequences(k, len);
        let scores: Vec<f64> = all.iter().map(|s| direct_score(&m, &f, s)).collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let brute = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
        let delta = (log_partition(&m, &f) - brute).abs();
        worst = worst.max(delta);
        ensure(delta < 1e-8, || format!("fixture {fixture}: log Z off by {delta:e}"))?;

        let feasible = all.iter().filter(|s| {
            s.iter()
                .enumerate()
                .all(|(t, &y)| m.tag_set.allowed(t.checked_sub(1).map(|p| s[p]), y))
        });
        let best = feasible.map(|s| m.score(&f, s)).fold(f64::NEG_INFINITY, f64::max);
        let (tags, score) = viterbi_decode(&m, &f);
        ensure(score == best, || {
            format!("fixture {fixture}: viterbi {score} vs enumeration {best}")
        })?;
        ensure(m.score(&f, &tags) == score, || {
            format!("fixture {fixture}: viterbi path rescoring differs")
        })?;
    }
    Ok(format!("200 fixtures, max |log Z delta| {worst:.1e}, viterbi exact"))
}

// ----------------------------------------------------------- gradients

fn crf_gradient_fixture(rng: &mut ChaCha8Rng, tag_set: TagSet) -> Result<f64, String> {
    let mut m = random_crf(rng, tag_set, 1.0);
    m.l2 = 0.1;
    let len = rng.gen_range(2..=6);
    let f = random_crf_feats(rng, len);
    let k = m.num_labels();
    let gold: Vec<usize> = (0..len).map(|_| rng.gen_range(0..k)).collect();
    let (_, g) = crf_nll_and_gradient(&m, &f, &gold).map_err(|e| e.to_string())?;
    let loss = |m: &CrfModel| crf_nll_and_gradient(m, &f, &gold).unwrap().0;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut CrfModel, f64)| {
        let mut p = m.clone();
        perturb(&mut p, h);
        let mut q = m.clone();
        perturb(&mut q, -h);
        worst = worst.max(rel_err(analytic, (loss(&p) - loss(&q)) / (2.0 * h)));
    };
    for i in 0..m.unary.len() {
        check(g.unary[i], &|m, d| m.unary[i] += d);
    }
    for i in 0..k * k {
        check(g.transition[i], &|m, d| m.transition[i] += d);
    }
    for i in 0..k {
        check(g.start[i], &|m, d| m.start[i] += d);
        check(g.end[i], &|m, d| m.end[i] += d);
    }
    Ok(worst)
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize) -> Vec<SparseFeatures> {
    (0..n)
        .map(|_| {
            let mut entries: Vec<(u32, u8, f64)> = (0..rng.gen_range(1..7))
                .map(|_| {
                    (
                        rng.gen_range(0..24),
                        rng.gen_range(0..GAIN_GROUPS as u8),
                        rng.gen_range(0.5..3.0),
                    )
                })
                .collect();
            entries.sort_by_key(|e| (e.1, e.0));
            entries.dedup_by_key(|e| (e.1, e.0));
            SparseFeatures { entries }
        })
        .collect()
}

fn encoder_gradient_fixture(rng: &mut ChaCha8Rng, fixture: u64) -> Result<f64, String> {
    let mut enc_c = EncoderModel::new(16, 64, 2 * fixture).map_err(|e| e.to_string())?;
    let mut enc_d = EncoderModel::new(16, 64, 2 * fixture + 1).map_err(|e| e.to_string())?;
    for g in enc_c.gains_mut().iter_mut().chain(enc_d.gains_mut().iter_mut()) {
        *g = rng.gen_range(0.5..1.5);
    }
    let b = rng.gen_range(2..=5);
    let ctx = random_sparse(rng, b);
    let pos = random_sparse(rng, b);
    let (_, gc, gd) = batch_loss_and_gradients(&enc_c, &enc_d, &ctx, &pos).map_err(|e| e.to_string())?;
    let loss = |c: &EncoderModel, d: &EncoderModel| batch_loss_and_gradients(c, d, &ctx, &pos).unwrap().0;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for side in 0..2 {
        let grad = if side == 0 { &gc } else { &gd };
        let base = if side == 0 { &enc_c } else { &enc_d };
        let eval = |m: &EncoderModel| if side == 0 { loss(m, &enc_d) } else { loss(&enc_c, m) };
        for (&bucket, row) in &grad.rows {
            for t in 0..base.dim() {
                let mut p = base.clone();
                p.row_mut(bucket)[t] += h;
                let mut q = base.clone();
                q.row_mut(bucket)[t] -= h;
                worst = worst.max(rel_err(row[t], (eval(&p) - eval(&q)) / (2.0 * h)));
            }
        }
        for gi in 0..GAIN_GROUPS {
            let mut p = base.clone();
            p.gains_mut()[gi] += h;
            let mut q = base.clone();
            q.gains_mut()[gi] -= h;
            worst = worst.max(rel_err(grad.gains[gi], (eval(&p) - eval(&q)) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut crf_worst = 0.0f64;
    for i in 0..20 {
        let ts = if i % 2 == 0 {
            TagSet::binary(SpanLabel::Claim)
        } else {
            TagSet::pio()
        };
        crf_worst = crf_worst.max(crf_gradient_fixture(&mut rng, ts)?);
    }
    let mut enc_worst = 0.0f64;
    for i in 0..20 {
        enc_worst = enc_worst.max(encoder_gradient_fixture(&mut rng, i)?);
    }
    ensure(crf_worst < 1e-4, || format!("CRF relative error {crf_worst:e}"))?;
    ensure(enc_worst < 1e-3, || format!("encoder relative error {enc_worst:e}"))?;
    Ok(format!(
        "20+20 fixtures, max relative error CRF {crf_worst:.1e}, encoder {enc_worst:.1e}"
    ))
}

// ------------------------------------------------------------- tagger

fn tagger_learning() -> Outcome {
    let corpus = synth_corpus(&SynthConfig {
        n_posts: 5000,
        seed: 7,
        ..SynthConfig::default()
    });
    let mut by_post: HashMap<&str, Vec<AnnotationSet>> = HashMap::new();
    for s in &corpus.annotations {
        by_post.entry(s.post_id.as_str()).or_default().push(s.clone());
    }
    let resolved: Vec<AnnotationSet> = corpus
        .posts
        .iter()
        .map(|p| aggregate_labels(&by_post[p.id.as_str()], p).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let split = split_corpus(&corpus.posts, DEFAULT_RATIOS, 7).map_err(|e| e.to_string())?;
    let train: Vec<Post> = corpus
        .posts
        .iter()
        .filter(|p| split.contains_train(&p.id))
        .cloned()
        .collect();
    let test: Vec<Post> = corpus
        .posts
        .iter()
        .filter(|p| split.contains_test(&p.id))
        .cloned()
        .collect();
    let config = TaggerConfig {
        train: medclaim::tagger::TrainConfig {
            seed: 7,
            ..Default::default()
        },
        ..TaggerConfig::default()
    };
    let (bundle, _) = TaggerBundle::train(&train, &resolved, &config).map_err(|e| e.to_string())?;
    let eval = evaluate_tagger(&bundle, &test, &corpus.gold);
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for (label, floor) in SpanLabel::STAGE1
        .iter()
        .map(|l| (*l, 0.95))
        .chain(SpanLabel::PIO.iter().map(|l| (*l, 0.90)))
    {
        let f1 = eval.get(label).map_or(0.0, |s| s.prf.f1);
        parts.push(format!("{} {f1:.3}", label.as_str()));
        if f1 < floor {
            failed.push(format!("{} {f1:.4} < {floor}", label.as_str()));
        }
    }
    let line = format!("test F1 {} ({} test posts)", parts.join(", "), test.len());
    if failed.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; below floor: {}", failed.join(", ")))
    }
}

// ---------------------------------------------------- pseudo pairs

fn pseudo_supervision() -> Outcome {
    let corpus = synth_corpus(&SynthConfig {
        n_posts: 3000,
        seed: 7,
        ..SynthConfig::default()
    });
    let templates = templates_from_corpus(&corpus.posts, &corpus.gold);
    let (pairs, _) = generate(&templates, &corpus.evidence, 10, 7).map_err(|e| e.to_string())?;
    ensure(pairs.len() >= 10_000, || {
        format!("only {} pairs generated", pairs.len())
    })?;
    let by_id: HashMap<&str, &EvidenceAbstract> = corpus.evidence.iter().map(|a| (a.id.as_str(), a)).collect();
    for (i, p) in pairs.iter().enumerate() {
        let a = by_id
            .get(p.positive_abstract_id.as_str())
            .ok_or_else(|| format!("pair {i}: unknown positive {}", p.positive_abstract_id))?;
        for kind in SpanLabel::PIO {
            for s in p.elements(kind) {
                ensure(p.pseudo_post.contains(s.as_str()), || {
                    format!("pair {i}: {s:?} not in post")
                })?;
                ensure(p.pseudo_claim.contains(s.as_str()), || {
                    format!("pair {i}: {s:?} not in claim")
                })?;
                ensure(a.elements(kind).contains(s), || {
                    format!("pair {i}: {s:?} not listed by abstract")
                })?;
            }
        }
        ensure(!(p.pop.is_empty() && p.int.is_empty() && p.out.is_empty()), || {
            format!("pair {i}: no substituted strings")
        })?;
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (again, _) = generate(&templates, &corpus.evidence, 10, 7).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    save_pairs(&a, &pairs).map_err(|e| e.to_string())?;
    save_pairs(&b, &again).map_err(|e| e.to_string())?;
    let same = std::fs::read(&a).map_err(|e| e.to_string())? == std::fs::read(&b).map_err(|e| e.to_string())?;
    ensure(same, || "re-run produced a different file".into())?;
    Ok(format!(
        "{} pairs from {} templates, all contained and positive ids valid, re-run byte-identical",
        pairs.len(),
        templates.len()
    ))
}

// ------------------------------------------------------- retrieval

fn run_dense(enc_c: &EncoderModel, enc_d: &EncoderModel, evidence: &[EvidenceAbstract], queries: &[PseudoPair]) -> Run {
    let index = build_index(enc_d, evidence).unwrap();
    queries
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = format!("q{i}");
            let hits = index.search(&q, &enc_c.encode(&pair_context(p)), 100).unwrap();
            (q, hits)
        })
        .collect()
}

fn retrieval_ordering() -> Outcome {
    let corpus = synth_corpus(&SynthConfig {
        n_posts: 1500,
        seed: 7,
        n_abstracts: 1000,
        lexicon_size: 60,
        single_slot_rate: 0.0,
        surface_variation: 0.8,
        distractor_mentions: 3,
        ..SynthConfig::default()
    });
    let split = split_corpus(&corpus.posts, DEFAULT_RATIOS, 7).map_err(|e| e.to_string())?;
    let (train_posts, test_posts): (Vec<Post>, Vec<Post>) =
        corpus.posts.iter().cloned().partition(|p| !split.contains_test(&p.id));
    let train_templates = templates_from_corpus(&train_posts, &corpus.gold);
    let test_templates = templates_from_corpus(&test_posts, &corpus.gold);
    let (mut train, _) = generate(&train_templates, &corpus.evidence, 2, 7).map_err(|e| e.to_string())?;
    let (mut test, _) = generate(&test_templates, &corpus.evidence, 2, 8).map_err(|e| e.to_string())?;
    train.truncate(1000);
    test.truncate(200);
    ensure(train.len() == 1000 && test.len() == 200, || {
        format!("{} train and {} test pairs", train.len(), test.len())
    })?;

    let config = RetrieverConfig {
        dim: 64,
        seed: 7,
        step_size: 3e-4,
        ..RetrieverConfig::default()
    };
    let (enc_c, enc_d, _) = train_retriever(&train, &corpus.evidence, &config).map_err(|e| e.to_string())?;
    let (init_c, init_d, _) = train_retriever(
        &train,
        &corpus.evidence,
        &RetrieverConfig {
            epochs: 0,
            ..config.clone()
        },
    )
    .map_err(|e| e.to_string())?;

    let qrels: Qrels = test
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("q{i}"), [p.positive_abstract_id.clone()].into()))
        .collect();
    let ks = [1, 10];
    let score = |run: &Run| evaluate_ranking(run, &qrels, &ks).unwrap();
    let trained = score(&run_dense(&enc_c, &enc_d, &corpus.evidence, &test));
    let untrained = score(&run_dense(&init_c, &init_d, &corpus.evidence, &test));
    let bm25 = bm25_build(&corpus.evidence, 1.5, 0.75).unwrap();
    let lexical: Run = test
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = format!("q{i}");
            let hits = bm25_search(&bm25, &q, &pair_context(p), 100).unwrap();
            (q, hits)
        })
        .collect();
    let lexical = score(&lexical);
    let ids: Vec<String> = corpus.evidence.iter().map(|a| a.id.clone()).collect();
    let qids: Vec<String> = qrels.keys().cloned().collect();
    let random = score(&random_baseline(&ids, &qids, 100, 7));

    let p = |r: &RankingReport, k| r.precision_at(k).unwrap();
    let line = format!(
        "P@1 trained {:.3} untrained {:.3} bm25 {:.3} random {:.3}; trained P@10 {:.3}",
        p(&trained, 1),
        p(&untrained, 1),
        p(&lexical, 1),
        p(&random, 1),
        p(&trained, 10)
    );
    let checks = [
        (p(&trained, 1) > p(&untrained, 1), "trained P@1 > untrained P@1"),
        (p(&untrained, 1) > p(&random, 1), "untrained P@1 > random P@1"),
        (p(&trained, 1) >= 2.0 * p(&lexical, 1), "trained P@1 >= 2 x BM25 P@1"),
        (p(&trained, 10) >= 0.90, "trained P@10 >= 0.90"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, what)| *what).collect();
    if failed.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; violated: {}", failed.join(", ")))
    }
}

// ----------------------------------------------------- exact search

fn brute_force(ids: &[String], matrix: &[f32], dim: usize, query: &[f64], k: usize) -> Vec<Hit> {
    let mut scored: Vec<(String, f64)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut s = 0.0;
            for t in 0..dim {
                s += matrix[i * dim + t] as f64 * query[t];
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(abstract_id, score)| Hit { abstract_id, score })
        .collect()
}

fn exact_search() -> Outcome {
    let (m, dim) = (200, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    let mut tied_queries = 0;
    for qi in 0..50 {
        let coarse = qi % 2 == 1;
        let value = |rng: &mut ChaCha8Rng| {
            if coarse {
                rng.gen_range(-1i32..=1) as f64
            } else {
                rng.gen_range(-1.0..1.0)
            }
        };
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let ids: Vec<String> = perm.iter().map(|i| format!("doc{i:04}")).collect();
        let mut matrix: Vec<f32> = (0..m * dim).map(|_| value(&mut rng) as f32).collect();
        // Duplicate a few rows so that exact ties are guaranteed.
        for _ in 0..10 {
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            let row: Vec<f32> = matrix[a * dim..(a + 1) * dim].to_vec();
            matrix[b * dim..(b + 1) * dim].copy_from_slice(&row);
        }
        let query: Vec<f64> = (0..dim).map(|_| value(&mut rng)).collect();
        let k = [1, 5, 10, 50, 200, 250][qi % 6];
        let index = EvidenceIndex::from_parts(dim, ids.clone(), matrix.clone(), 0).map_err(|e| e.to_string())?;
        let got = index.search("q", &query, k).map_err(|e| e.to_string())?.hits;
        let want = brute_force(&ids, &matrix, dim, &query, k);
        if want.windows(2).any(|w| w[0].score == w[1].score) {
            tied_queries += 1;
        }
        if got != want {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || {
        format!("{mismatches} of 50 queries differ from the linear scan")
    })?;
    Ok(format!(
        "50 queries x m={m}, d={dim}: 0 mismatches ({tied_queries} with tied scores)"
    ))
}

// ---------------------------------------------------------- metrics

/// Second implementation: walks each ranked list once per k.
fn oracle_metrics(run: &Run, qrels: &Qrels, ks: &[usize]) -> (Vec<f64>, Vec<f64>, PrecisionConvention) {
    let success = qrels.values().all(|p| p.len() == 1);
    let mut mrr = vec![0.0; ks.len()];
    let mut prec = vec![0.0; ks.len()];
    for (q, positives) in qrels {
        let ranked: Vec<&str> = run
            .get(q)
            .map(|l| l.hits.iter().map(|h| h.abstract_id.as_str()).collect())
            .unwrap_or_default();
        for (i, &k) in ks.iter().enumerate() {
            let top = &ranked[..k.min(ranked.len())];
            let relevant = top.iter().filter(|id| positives.contains(**id)).count();
            if let Some(r) = top.iter().position(|id| positives.contains(*id)) {
                mrr[i] += 1.0 / (r + 1) as f64;
            }
            prec[i] += if success {
                if relevant > 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                relevant as f64 / k as f64
            };
        }
    }
    let n = qrels.len() as f64;
    let convention = if success {
        PrecisionConvention::Success
    } else {
        PrecisionConvention::Classical
    };
    (
        mrr.into_iter().map(|x| x / n).collect(),
        prec.into_iter().map(|x| x / n).collect(),
        convention,
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut conventions = [0usize; 2];
    for r in 0..100 {
        let m = rng.gen_range(5..40);
        let ids: Vec<String> = (0..m).map(|i| format!("d{i}")).collect();
        let n_queries = rng.gen_range(1..30);
        let multi = r % 2 == 1;
        let mut qrels = Qrels::new();
        let mut run = Run::new();
        for q in 0..n_queries {
            let qid = format!("q{q}");
            let n_pos = if multi { rng.gen_range(1..4) } else { 1 };
            let positives: BTreeSet<String> = ids.choose_multiple(&mut rng, n_pos).cloned().collect();
            qrels.insert(qid.clone(), positives);
            if rng.gen_bool(0.85) {
                let mut order = ids.clone();
                order.shuffle(&mut rng);
                order.truncate(rng.gen_range(1..=m));
                let hits = order
                    .into_iter()
                    .enumerate()
                    .map(|(i, abstract_id)| Hit {
                        abstract_id,
                        score: -(i as f64),
                    })
                    .collect::<Vec<_>>();
                run.insert(
                    qid.clone(),
                    RankedList {
                        claim_id: qid,
                        k: hits.len(),
                        hits,
                    },
                );
            }
        }
        if multi && qrels.values().all(|p| p.len() == 1) {
            qrels.values_mut().next().unwrap().insert(ids[0].clone());
            qrels.values_mut().next().unwrap().insert(ids[1].clone());
        }
        let mut ks: Vec<usize> = (1..=m + 5)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, 4)
            .copied()
            .collect();
        ks.sort();
        let got = evaluate_ranking(&run, &qrels, &ks).map_err(|e| e.to_string())?;
        let (mrr, prec, convention) = oracle_metrics(&run, &qrels, &ks);
        ensure(got.convention == convention, || format!("run {r}: convention differs"))?;
        ensure(got.mrr == mrr, || {
            format!("run {r}: MRR {:?} vs oracle {mrr:?}", got.mrr)
        })?;
        ensure(got.precision == prec, || {
            format!("run {r}: P {:?} vs oracle {prec:?}", got.precision)
        })?;
        conventions[usize::from(convention == PrecisionConvention::Classical)] += 1;
    }

    let enc = EncoderModel::new(8, 64, 0).map_err(|e| e.to_string())?;
    let same = enc.features("identical text everywhere");
    let mut worst = 0.0f64;
    for b in [2usize, 10, 100] {
        let batch = vec![same.clone(); b];
        let (loss, _, _) = batch_loss_and_gradients(&enc, &enc, &batch, &batch).map_err(|e| e.to_string())?;
        worst = worst.max((loss - (b as f64).ln()).abs());
    }
    ensure(worst < 1e-9, || {
        format!("uniform-similarity loss off ln b by {worst:e}")
    })?;
    Ok(format!(
        "100 runs exact ({} success, {} classical); uniform loss max |loss - ln b| {worst:.1e}",
        conventions[0], conventions[1]
    ))
}

// -------------------------------------------------------- agreement

fn agreement_statistics() -> Outcome {
    // Unanimous items over two categories.
    let unanimous: Vec<Vec<usize>> = (0..12)
        .map(|i| if i % 3 == 0 { vec![4, 0] } else { vec![0, 4] })
        .collect();
    let k1 = fleiss_kappa(&unanimous, 4).map_err(|e| e.to_string())?;
    ensure(k1 == 1.0, || format!("unanimous kappa {k1}"))?;

    // Worked example, 3 raters x 3 categories:
    //   P_i = 1, 1/3, 0, 1, 1/3 -> mean 8/15
    //   p_j = 6/15, 4/15, 5/15 -> P_e = 77/225
    //   kappa = (8/15 - 77/225) / (1 - 77/225) = 43/148
    let worked = vec![
        vec![3, 0, 0],
        vec![0, 2, 1],
        vec![1, 1, 1],
        vec![0, 0, 3],
        vec![2, 1, 0],
    ];
    let k2 = fleiss_kappa(&worked, 3).map_err(|e| e.to_string())?;
    ensure((k2 - 43.0 / 148.0).abs() < 1e-9, || {
        format!("worked example kappa {k2}, expected 43/148")
    })?;

    // Independent raters.
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let independent: Vec<Vec<usize>> = (0..5000)
        .map(|_| {
            let mut row = vec![0; 3];
            for _ in 0..3 {
                row[rng.gen_range(0..3)] += 1;
            }
            row
        })
        .collect();
    let k3 = fleiss_kappa(&independent, 3).map_err(|e| e.to_string())?;
    ensure(k3.abs() <= 0.05, || format!("independent-rater kappa {k3}"))?;

    // 100 items: 37 unanimous, 22 with three different grades, 41 split 2-1.
    let grades = [Grade::Relevant, Grade::SomewhatRelevant, Grade::Irrelevant];
    let mut judgments = Vec::new();
    for item in 0..100 {
        let g = match item {
            0..=36 => [grades[item % 3]; 3],
            37..=58 => [grades[0], grades[1], grades[2]],
            _ => [grades[item % 3], grades[item % 3], grades[(item + 1) % 3]],
        };
        for (r, grade) in g.into_iter().enumerate() {
            judgments.push(Judgment {
                claim_id: format!("c{}", item / 10),
                abstract_id: format!("a{item}"),
                rater_id: format!("r{r}"),
                grade,
            });
        }
    }
    let summary = aggregate_judgments(&judgments).map_err(|e| e.to_string())?;
    ensure(summary.all_agree_pct == 37.0 && summary.none_agree_pct == 22.0, || {
        format!(
            "all-agree {} none-agree {}, expected 37 and 22",
            summary.all_agree_pct, summary.none_agree_pct
        )
    })?;
    ensure(summary.items == 100 && summary.ties == 22, || {
        format!("{} items, {} ties", summary.items, summary.ties)
    })?;
    Ok(format!(
        "unanimous 1.0, worked example {k2:.6} (43/148), independent {k3:+.4}, judgments 37.00%/22.00%"
    ))
}

// ------------------------------------------------------------- BM25

fn bm25_oracle() -> Outcome {
    let texts = [
        "aspirin reduces pain",
        "aspirin aspirin and ulcers",
        "ibuprofen reduces fever in children",
        "placebo",
        "pain and fever after surgery with ibuprofen",
    ];
    let docs: Vec<EvidenceAbstract> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| EvidenceAbstract {
            id: format!("d{i}"),
            title: String::new(),
            text: t.to_string(),
            populations: vec![],
            interventions: vec![],
            outcomes: vec![],
            population_tag: None,
        })
        .collect();
    let index = bm25_build(&docs, 1.5, 0.75).map_err(|e| e.to_string())?;
    let tokens: Vec<Vec<&str>> = texts.iter().map(|t| t.split(' ').collect()).collect();
    let avg = tokens.iter().map(Vec::len).sum::<usize>() as f64 / tokens.len() as f64;
    let closed_form = |query: &str, d: usize| -> f64 {
        let n = tokens.len() as f64;
        query
            .split(' ')
            .map(|term| {
                let df = tokens.iter().filter(|t| t.contains(&term)).count() as f64;
                let tf = tokens[d].iter().filter(|w| **w == term).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let norm = 1.5 * (1.0 - 0.75 + 0.75 * tokens[d].len() as f64 / avg);
                idf * tf * 2.5 / (tf + norm)
            })
            .sum()
    };
    let mut worst = 0.0f64;
    for query in [
        "aspirin pain",
        "fever",
        "ibuprofen reduces fever",
        "placebo and ulcers",
        "pain pain",
    ] {
        let scores = index.scores(query);
        for (d, s) in scores.iter().enumerate() {
            worst = worst.max((s - closed_form(query, d)).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    ensure(index.scores("zebra").iter().all(|&s| s == 0.0), || {
        "absent term scored".into()
    })?;
    ensure(index.scores("fever zebra") == index.scores("fever"), || {
        "absent term changed a score".into()
    })?;
    Ok(format!("max deviation {worst:.1e}; absent term contributes exactly 0"))
}

// ---------------------------------------------------- determinism

const PIPELINE: &[&str] = &[
    "synth",
    "train-tagger",
    "tag",
    "pseudogen",
    "train-retriever",
    "index",
    "eval-retrieval",
];

const PIPELINE_CONFIG: &str = "\
[seeds]
seed = 11
[synth]
n_posts = 300
n_abstracts = 200
lexicon_size = 40
single_slot_rate = 0.0
surface_variation = 0.8
[tagger]
epochs = 8
[pseudogen]
source = tagged
per_template = 2
[retriever]
epochs = 4
step_size = 0.0003
ks = 1,5,10,50
";

fn run_pipeline(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    std::fs::write(root.join("run.ini"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    for cmd in PIPELINE {
        let out = Command::new(env!("CARGO_BIN_EXE_medclaim"))
            .arg("--config")
            .arg(root.join("run.ini"))
            .arg(cmd)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("`{cmd}` failed: {}", String::from_utf8_lossy(&out.stderr))
        })?;
    }
    let mut reports = BTreeMap::new();
    for entry in std::fs::read_dir(root.join("work/reports")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        reports.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&path).map_err(|e| e.to_string())?,
        );
    }
    Ok(reports)
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(&tmp.path().join("a"))?;
    let second = run_pipeline(&tmp.path().join("b"))?;
    ensure(first.contains_key("eval_retrieval.json"), || {
        "no retrieval report written".into()
    })?;
    let names: Vec<&String> = first.keys().collect();
    ensure(first.keys().eq(second.keys()), || {
        "runs wrote different report sets".into()
    })?;
    for (name, bytes) in &first {
        ensure(&second[name] == bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} reports byte-identical across two runs", names.len()))
}

// ------------------------------------------------------------ runner

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("CRF partition and Viterbi", Duration::from_secs(10), crf_correctness),
        ("gradient checks", Duration::from_secs(30), gradient_checks),
        ("tagger learning", Duration::from_secs(300), tagger_learning),
        ("pseudo-supervision invariant", Duration::MAX, pseudo_supervision),
        ("retrieval ordering", Duration::from_secs(600), retrieval_ordering),
        ("exact-search oracle", Duration::MAX, exact_search),
        ("metric oracles", Duration::MAX, metric_oracles),
        ("agreement statistics", Duration::MAX, agreement_statistics),
        ("BM25 oracle", Duration::MAX, bm25_oracle),
        ("end-to-end determinism", Duration::MAX, end_to_end_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| f == &id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let timing = if limit == Duration::MAX {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs())
        };
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; too slow")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  [{id:>2}] {name}: {detail} ({timing})"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  [{id:>2}] {name}: {detail} ({timing})");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
