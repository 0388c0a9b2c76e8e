//! JSON Lines readers and writers for posts, annotations, evidence and
//! judgments. Readers validate every record and report the 1-based line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AnnotationSet, CorpusError, EvidenceAbstract, Judgment, Post, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostRecord {
    id: String,
    population: String,
    text: String,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn records<T: DeserializeOwned>(contents: &str) -> impl Iterator<Item = Result<(usize, T)>> + '_ {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<T>(l)
                .map(|r| (i + 1, r))
                .map_err(|e| CorpusError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
}

pub fn parse_posts(contents: &str) -> Result<Vec<Post>> {
    let mut seen = HashSet::new();
    let mut posts = Vec::new();
    for rec in records::<PostRecord>(contents) {
        let (line, r) = rec?;
        if r.id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "field `id` is empty".into(),
            });
        }
        if !seen.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: r.id });
        }
        posts.push(Post::new(r.id, r.population, r.text));
    }
    Ok(posts)
}

pub fn load_posts(path: impl AsRef<Path>) -> Result<Vec<Post>> {
    parse_posts(&read_to_string(path.as_ref())?)
}

/// Parses annotation sets and validates each against the post it names.
pub fn parse_annotations(contents: &str, posts: &[Post]) -> Result<Vec<AnnotationSet>> {
    let lengths: HashMap<&str, usize> = posts.iter().map(|p| (p.id.as_str(), p.len())).collect();
    let mut seen = HashSet::new();
    let mut sets = Vec::new();
    for rec in records::<AnnotationSet>(contents) {
        let (line, set) = rec?;
        let Some(&n) = lengths.get(set.post_id.as_str()) else {
            return Err(CorpusError::UnknownPost {
                line,
                post_id: set.post_id,
            });
        };
        if !seen.insert((set.post_id.clone(), set.annotator_id.clone())) {
            return Err(CorpusError::DuplicateId {
                line,
                id: format!("{}/{}", set.post_id, set.annotator_id),
            });
        }
        set.validate(n)?;
        sets.push(set);
    }
    Ok(sets)
}

pub fn load_annotations(path: impl AsRef<Path>, posts: &[Post]) -> Result<Vec<AnnotationSet>> {
    parse_annotations(&read_to_string(path.as_ref())?, posts)
}

pub fn parse_evidence(contents: &str) -> Result<Vec<EvidenceAbstract>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in records::<EvidenceAbstract>(contents) {
        let (line, a) = rec?;
        for (field, list) in [
            ("populations", &a.populations),
            ("interventions", &a.interventions),
            ("outcomes", &a.outcomes),
        ] {
            if list.iter().any(|s| s.trim().is_empty()) {
                return Err(CorpusError::Malformed {
                    line,
                    message: format!("field `{field}` contains an empty string"),
                });
            }
        }
        if !seen.insert(a.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: a.id });
        }
        out.push(a);
    }
    Ok(out)
}

pub fn load_evidence(path: impl AsRef<Path>) -> Result<Vec<EvidenceAbstract>> {
    parse_evidence(&read_to_string(path.as_ref())?)
}

pub fn parse_judgments(contents: &str) -> Result<Vec<Judgment>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in records::<Judgment>(contents) {
        let (line, j) = rec?;
        if !seen.insert((j.claim_id.clone(), j.abstract_id.clone(), j.rater_id.clone())) {
            return Err(CorpusError::DuplicateId {
                line,
                id: format!("{}/{}/{}", j.claim_id, j.abstract_id, j.rater_id),
            });
        }
        out.push(j);
    }
    Ok(out)
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    parse_judgments(&read_to_string(path.as_ref())?)
}

fn write_lines<W: Write, T: Serialize>(w: &mut W, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_posts<W: Write>(w: &mut W, posts: &[Post]) -> std::io::Result<()> {
    write_lines(
        w,
        posts.iter().map(|p| PostRecord {
            id: p.id.clone(),
            population: p.population.clone(),
            text: p.text.clone(),
        }),
    )
}

pub fn write_annotations<W: Write>(w: &mut W, sets: &[AnnotationSet]) -> std::io::Result<()> {
    write_lines(w, sets)
}

pub fn write_evidence<W: Write>(w: &mut W, evidence: &[EvidenceAbstract]) -> std::io::Result<()> {
    write_lines(w, evidence)
}

pub fn write_judgments<W: Write>(w: &mut W, judgments: &[Judgment]) -> std::io::Result<()> {
    write_lines(w, judgments)
}

fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let wrap = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

pub fn save_posts(path: impl AsRef<Path>, posts: &[Post]) -> Result<()> {
    save_with(path.as_ref(), |w| write_posts(w, posts))
}

pub fn save_annotations(path: impl AsRef<Path>, sets: &[AnnotationSet]) -> Result<()> {
    save_with(path.as_ref(), |w| write_annotations(w, sets))
}

pub fn save_evidence(path: impl AsRef<Path>, evidence: &[EvidenceAbstract]) -> Result<()> {
    save_with(path.as_ref(), |w| write_evidence(w, evidence))
}

pub fn save_judgments(path: impl AsRef<Path>, judgments: &[Judgment]) -> Result<()> {
    save_with(path.as_ref(), |w| write_judgments(w, judgments))
}

#[cfg(test)]
mod tests {
    use super::*;

    const POSTS: &str = r#"{"id":"p1","population":"lupus","text":"I took aspirin."}
{"id":"p2","population":"lupus","text":"Does anyone know?"}
{"id":"p3","population":"adhd","text":"adderall-induced psychosis is real"}
"#;

    #[test]
    fn three_line_file() {
        let posts = parse_posts(POSTS).unwrap();
        assert_eq!(posts.len(), 3);
        assert_eq!(posts[0].tokens.len(), 4);
    }

    #[test]
    fn malformed_record_names_line_and_field() {
        let bad = "{\"id\":\"p1\",\"population\":\"x\",\"text\":\"a\"}\n{\"id\":\"p2\",\"population\":\"x\"}\n";
        let err = parse_posts(bad).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("text"), "{err}");
    }

    #[test]
    fn duplicate_post_id() {
        let dup = "{\"id\":\"p1\",\"population\":\"x\",\"text\":\"a\"}\n{\"id\":\"p1\",\"population\":\"x\",\"text\":\"b\"}\n";
        assert!(matches!(
            parse_posts(dup),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn span_out_of_range_names_post() {
        let posts = parse_posts(POSTS).unwrap();
        let ann = r#"{"post_id":"p1","annotator_id":"a1","spans":[{"label":"Claim","token_start":1,"token_end":7}]}"#;
        let err = parse_annotations(ann, &posts).unwrap_err();
        assert!(
            matches!(&err, CorpusError::InvalidSpan { post_id, .. } if post_id == "p1"),
            "{err}"
        );
    }

    #[test]
    fn unknown_label_is_malformed() {
        let posts = parse_posts(POSTS).unwrap();
        let ann =
            r#"{"post_id":"p1","annotator_id":"a1","spans":[{"label":"Claimish","token_start":0,"token_end":1}]}"#;
        assert!(matches!(
            parse_annotations(ann, &posts),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn evidence_rejects_empty_element() {
        let ev = r#"{"id":"a1","title":"t","text":"x","populations":[""],"interventions":[],"outcomes":[]}"#;
        let err = parse_evidence(ev).unwrap_err().to_string();
        assert!(err.contains("populations"), "{err}");
    }

    #[test]
    fn judgments_reject_bad_grade() {
        let j = r#"{"claim_id":"c","abstract_id":"a","rater_id":"r","grade":0}"#;
        assert!(parse_judgments(j).is_err());
    }

    #[test]
    fn canonical_files_round_trip_byte_identical() {
        let posts = parse_posts(POSTS).unwrap();
        let mut buf = Vec::new();
        write_posts(&mut buf, &posts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), POSTS);

        let ann = "{\"post_id\":\"p1\",\"annotator_id\":\"a1\",\"spans\":[{\"label\":\"Experience\",\"token_start\":0,\"token_end\":3},{\"label\":\"INT\",\"token_start\":2,\"token_end\":3}]}\n";
        let sets = parse_annotations(ann, &posts).unwrap();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &sets).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ann);

        let ev = "{\"id\":\"a1\",\"title\":\"T\",\"text\":\"body\",\"populations\":[\"adults\"],\"interventions\":[\"aspirin\"],\"outcomes\":[],\"population_tag\":null}\n";
        let parsed = parse_evidence(ev).unwrap();
        let mut buf = Vec::new();
        write_evidence(&mut buf, &parsed).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ev);
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let posts = parse_posts(POSTS).unwrap();
        let path = dir.path().join("posts.jsonl");
        save_posts(&path, &posts).unwrap();
        assert_eq!(load_posts(&path).unwrap(), posts);
        assert!(matches!(
            load_posts(dir.path().join("missing.jsonl")),
            Err(CorpusError::Io { .. })
        ));
    }
}
