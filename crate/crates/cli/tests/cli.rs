//! Runs the `medclaim` binary against small synthetic work directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "\
[seeds]
seed = 5
[synth]
n_posts = 150
n_abstracts = 80
lexicon_size = 30
[tagger]
epochs = 4
bucket_count = 4096
[retriever]
epochs = 1
dim = 16
bucket_count = 4096
";

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Env {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        std::fs::write(root.join("run.ini"), config).unwrap();
        Self { _tmp: tmp, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_medclaim"))
            .arg("--config")
            .arg(self.root.join("run.ini"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().expect("terminated by signal")
    }

    fn work(&self) -> PathBuf {
        self.root.join("work")
    }

    fn report(&self, name: &str) -> Value {
        read_json(&self.work().join("reports").join(format!("{name}.json")))
    }

    fn artifact(&self, kind: &str) -> PathBuf {
        let manifest = read_json(&self.work().join("artifacts.json"));
        self.work().join("artifacts").join(manifest[kind].as_str().unwrap())
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_corpus_is_an_input_error() {
    let env = Env::new(SMALL);
    std::fs::create_dir_all(env.work()).unwrap();
    std::fs::write(env.work().join("posts.jsonl"), "").unwrap();
    std::fs::write(env.work().join("annotations.jsonl"), "").unwrap();
    assert_eq!(env.code(&["stats"]), 2);
    assert_eq!(env.code(&["split"]), 2);
}

#[test]
fn missing_inputs_and_models_are_input_errors() {
    let env = Env::new(SMALL);
    assert_eq!(env.code(&["stats"]), 2);
    env.ok(&["synth"]);
    assert_eq!(env.code(&["tag"]), 2);
    assert_eq!(env.code(&["index"]), 2);
    assert_eq!(env.code(&["judge-report"]), 2);
    let missing = Env::new(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_medclaim"))
        .arg("--config")
        .arg(missing.root.join("absent.ini"))
        .arg("stats")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let env = Env::new("[retriever]\nlearning_rate = 0.1\n");
    assert_eq!(env.code(&["synth"]), 2);
}

#[test]
fn index_from_other_encoder_is_rejected() {
    let env = Env::new(SMALL);
    for cmd in ["synth", "pseudogen", "train-retriever", "index"] {
        env.ok(&[cmd]);
    }
    env.ok(&["eval-retrieval"]);
    env.ok(&["--seed", "99", "train-retriever"]);
    assert_eq!(env.code(&["eval-retrieval"]), 2);
    let err = env.run(&["eval-retrieval"]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("fingerprint"));
}

#[test]
fn split_is_reproducible() {
    let env = Env::new(SMALL);
    env.ok(&["synth"]);
    env.ok(&["split"]);
    let first = env.artifact("split");
    let bytes = std::fs::read(&first).unwrap();
    env.ok(&["split"]);
    assert_eq!(env.artifact("split"), first);
    assert_eq!(std::fs::read(&first).unwrap(), bytes);
    env.ok(&["--seed", "6", "split"]);
    assert_ne!(env.artifact("split"), first);
}

#[test]
fn tagging_twice_gives_the_same_artifact() {
    let env = Env::new(SMALL);
    env.ok(&["synth"]);
    env.ok(&["train-tagger"]);
    env.ok(&["tag"]);
    let first = std::fs::read(env.artifact("tagged")).unwrap();
    env.ok(&["tag"]);
    assert_eq!(std::fs::read(env.artifact("tagged")).unwrap(), first);
    env.ok(&["eval-tagger"]);
    assert_eq!(env.report("eval_tagger")["gold"], "reference");
}

#[test]
fn query_with_k_above_index_size_ranks_everything() {
    let env = Env::new(SMALL);
    for cmd in ["synth", "train-tagger", "pseudogen", "train-retriever", "index"] {
        env.ok(&[cmd]);
    }
    let posts = env.work().join("posts.jsonl");
    let first_line = std::fs::read_to_string(&posts)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let post: Value = serde_json::from_str(&first_line).unwrap();
    let id = post["id"].as_str().unwrap();
    env.ok(&[
        "query",
        "--posts",
        posts.to_str().unwrap(),
        "--post-id",
        id,
        "--claim",
        "0:3",
        "--k",
        "500",
    ]);
    let report = env.report("query");
    let hits = report["queries"][0]["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 80);
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(
        env.code(&[
            "query",
            "--posts",
            posts.to_str().unwrap(),
            "--post-id",
            id,
            "--claim",
            "0:100000"
        ]),
        2
    );
}

#[test]
fn judge_report_counts_agreement() {
    let env = Env::new(SMALL);
    std::fs::create_dir_all(env.work()).unwrap();
    // Items 0-3 unanimous, 4-5 all different, 6-9 split two to one.
    let grades: [[u8; 3]; 10] = [
        [3, 3, 3],
        [2, 2, 2],
        [1, 1, 1],
        [3, 3, 3],
        [3, 2, 1],
        [1, 2, 3],
        [3, 3, 1],
        [2, 1, 2],
        [1, 1, 3],
        [2, 3, 3],
    ];
    let mut lines = String::new();
    let mut run = String::new();
    for (i, g) in grades.iter().enumerate() {
        for (r, grade) in g.iter().enumerate() {
            lines.push_str(&format!(
                "{{\"claim_id\":\"c1\",\"abstract_id\":\"a{i}\",\"rater_id\":\"r{r}\",\"grade\":{grade}}}\n"
            ));
        }
        run.push_str(&format!("c1\ta{i}\t{}\t{}\n", i + 1, 10 - i));
    }
    std::fs::write(env.work().join("judgments.jsonl"), lines).unwrap();
    std::fs::write(env.root.join("run.tsv"), run).unwrap();
    env.ok(&["judge-report", "--run", env.root.join("run.tsv").to_str().unwrap()]);
    let report = env.report("judge_report");
    assert_eq!(report["items"], 10);
    assert_eq!(report["ties"], 2);
    assert_eq!(report["all_agree_pct"].as_f64(), Some(40.0));
    assert_eq!(report["none_agree_pct"].as_f64(), Some(20.0));
    assert!(report["cumulative"].is_array());
}

#[test]
fn stats_on_reference_match_planted_counts() {
    let env = Env::new(&format!("{SMALL}[paths]\nannotations = work/reference.jsonl\n"));
    env.ok(&["synth"]);
    env.ok(&["stats"]);
    let planted = env.report("synth")["planted"].clone();
    let stats = env.report("stats");
    let rows = stats["populations"].as_array().unwrap();
    assert!(!rows.is_empty());
    for row in rows {
        let name = row["population"].as_str().unwrap();
        let p = &planted[name];
        for key in ["posts", "claims", "questions", "experiences"] {
            assert_eq!(row[key], p[key], "{name} {key}");
        }
    }
}

#[test]
fn same_seed_same_reports() {
    let a = Env::new(SMALL);
    let b = Env::new(SMALL);
    for env in [&a, &b] {
        env.ok(&["synth"]);
        env.ok(&["split"]);
        env.ok(&["agree"]);
    }
    for name in ["synth", "split", "agree"] {
        assert_eq!(a.report(name), b.report(name), "{name}");
    }
}
