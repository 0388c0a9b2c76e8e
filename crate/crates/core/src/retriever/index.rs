//! Exact dot-product index over abstract embeddings, with an optional coarse
//! partition for faster approximate search.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::EncoderModel;
use super::{Result, RetrieverError};
use crate::corpus::EvidenceAbstract;

const MAGIC: &[u8; 4] = b"DERX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub abstract_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub claim_id: String,
    pub k: usize,
    pub hits: Vec<Hit>,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Top `k` of `(id, score)` candidates under `rank_order`.
pub(crate) fn top_k(mut scored: Vec<(&str, f64)>, k: usize) -> Vec<(&str, f64)> {
    let cmp = |a: &(&str, f64), b: &(&str, f64)| rank_order(*a, *b);
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
    fingerprint: u64,
}

/// Centroid buckets over the index rows; search probes the closest buckets
/// and re-ranks their members exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseIndex {
    centroids: Vec<Vec<f64>>,
    lists: Vec<Vec<usize>>,
}

impl EvidenceIndex {
    pub fn from_parts(dim: usize, ids: Vec<String>, matrix: Vec<f32>, fingerprint: u64) -> Result<Self> {
        if matrix.len() != dim * ids.len() {
            return Err(RetrieverError::InvalidModel(format!(
                "{} ids but {} matrix entries at dimension {dim}",
                ids.len(),
                matrix.len()
            )));
        }
        Ok(Self {
            dim,
            ids,
            matrix,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    fn score(&self, i: usize, query: &[f64]) -> f64 {
        self.row(i).iter().zip(query).map(|(&r, &q)| r as f64 * q).sum()
    }

    fn check(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(RetrieverError::InvalidConfig("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(RetrieverError::InvalidConfig(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn ranked(&self, claim_id: &str, k: usize, scored: Vec<(&str, f64)>) -> RankedList {
        RankedList {
            claim_id: claim_id.to_string(),
            k,
            hits: top_k(scored, k)
                .into_iter()
                .map(|(id, score)| Hit {
                    abstract_id: id.to_string(),
                    score,
                })
                .collect(),
        }
    }

    /// Exact top `k` by dot product, ties broken by ascending id.
    pub fn search(&self, claim_id: &str, query: &[f64], k: usize) -> Result<RankedList> {
        self.check(query, k)?;
        let scored = (0..self.len())
            .map(|i| (self.ids[i].as_str(), self.score(i, query)))
            .collect();
        Ok(self.ranked(claim_id, k, scored))
    }

    /// Search after checking that `encoder` produced this index.
    pub fn search_checked(
        &self,
        encoder: &EncoderModel,
        claim_id: &str,
        query: &[f64],
        k: usize,
    ) -> Result<RankedList> {
        let actual = encoder.fingerprint();
        if actual != self.fingerprint {
            return Err(RetrieverError::FingerprintMismatch {
                index: self.fingerprint,
                encoder: actual,
            });
        }
        self.search(claim_id, query, k)
    }

    /// Lloyd's k-means on the rows with `n_lists` centroids.
    pub fn build_coarse(&self, n_lists: usize, iterations: usize, seed: u64) -> CoarseIndex {
        let n_lists = n_lists.clamp(1, self.len().max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row64 = |i: usize| self.row(i).iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let mut centroids: Vec<Vec<f64>> = if self.is_empty() {
            vec![vec![0.0; self.dim]]
        } else {
            sample(&mut rng, self.len(), n_lists).into_iter().map(row64).collect()
        };
        let mut assign = vec![0usize; self.len()];
        for _ in 0..iterations.max(1) {
            for (i, a) in assign.iter_mut().enumerate() {
                *a = nearest(&centroids, &self.row(i).iter().map(|&x| x as f64).collect::<Vec<_>>());
            }
            let mut sums = vec![vec![0.0; self.dim]; centroids.len()];
            let mut counts = vec![0usize; centroids.len()];
            for (i, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                sums[a].iter_mut().zip(self.row(i)).for_each(|(s, &x)| *s += x as f64);
            }
            for (c, (sum, n)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
                if n > 0 {
                    *c = sum.into_iter().map(|s| s / n as f64).collect();
                }
            }
        }
        let mut lists = vec![Vec::new(); centroids.len()];
        for (i, &a) in assign.iter().enumerate() {
            lists[a].push(i);
        }
        CoarseIndex { centroids, lists }
    }

    /// Top `k` among the members of the `n_probe` buckets whose centroids
    /// score highest against the query.
    pub fn search_coarse(
        &self,
        coarse: &CoarseIndex,
        claim_id: &str,
        query: &[f64],
        k: usize,
        n_probe: usize,
    ) -> Result<RankedList> {
        self.check(query, k)?;
        let mut order: Vec<(usize, f64)> = coarse
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dot(c, query)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let scored = order
            .iter()
            .take(n_probe.max(1))
            .flat_map(|&(c, _)| coarse.lists[c].iter())
            .map(|&i| (self.ids[i].as_str(), self.score(i, query)))
            .collect();
        Ok(self.ranked(claim_id, k, scored))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.fingerprint.to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for x in &self.matrix {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| RetrieverError::InvalidModel(m.to_string());
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| bad("truncated index file"))?;
            Ok(buf)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let u32_of = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let u64_of = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        if u32_of(take(4)?) != VERSION {
            return Err(bad("unsupported index version"));
        }
        let dim = u32_of(take(4)?) as usize;
        let m = u64_of(take(8)?) as usize;
        let fingerprint = u64_of(take(8)?);
        let mut ids = Vec::with_capacity(m.min(1 << 20));
        for _ in 0..m {
            let len = u32_of(take(4)?) as usize;
            if len > 1 << 16 {
                return Err(bad("id too long"));
            }
            ids.push(String::from_utf8(take(len)?).map_err(|_| bad("id is not UTF-8"))?);
        }
        let raw = take(4 * dim * m)?;
        let matrix = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut rest = [0u8; 1];
        if r.read(&mut rest).unwrap_or(0) != 0 {
            return Err(bad("trailing bytes"));
        }
        Self::from_parts(dim, ids, matrix, fingerprint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| RetrieverError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        self.write(&mut w).and_then(|_| w.flush()).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| RetrieverError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist(c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Encodes every abstract's `title text` with the evidence encoder. Rows are
/// ordered by abstract id.
pub fn build_index(encoder: &EncoderModel, abstracts: &[EvidenceAbstract]) -> Result<EvidenceIndex> {
    if abstracts.is_empty() {
        return Err(RetrieverError::Empty("no abstracts to index".into()));
    }
    let mut sorted: Vec<&EvidenceAbstract> = abstracts.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(RetrieverError::InvalidConfig("duplicate abstract id".into()));
    }
    let mut matrix = Vec::with_capacity(sorted.len() * encoder.dim());
    for a in &sorted {
        matrix.extend(encoder.encode(&a.document_text()).into_iter().map(|x| x as f32));
    }
    EvidenceIndex::from_parts(
        encoder.dim(),
        sorted.into_iter().map(|a| a.id.clone()).collect(),
        matrix,
        encoder.fingerprint(),
    )
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn random_index(rng: &mut impl Rng, m: usize, d: usize) -> EvidenceIndex {
        let ids = (0..m).map(|i| format!("A{i:04}")).collect();
        let matrix = (0..m * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        EvidenceIndex::from_parts(d, ids, matrix, 0).unwrap()
    }

    #[test]
    fn full_ranking_when_k_exceeds_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = random_index(&mut rng, 10, 4);
        let r = idx.search("q", &[1.0, 0.0, 0.0, 0.0], 50).unwrap();
        assert_eq!(r.hits.len(), 10);
        assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn identical_rows_ordered_by_id() {
        let idx = EvidenceIndex::from_parts(2, vec!["b".into(), "a".into(), "c".into()], vec![1.0; 6], 0).unwrap();
        let r = idx.search("q", &[1.0, 1.0], 3).unwrap();
        let ids: Vec<&str> = r.hits.iter().map(|h| h.abstract_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn coarse_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let idx = random_index(&mut rng, 400, 16);
        let coarse = idx.build_coarse(20, 10, 3);
        let mut found = 0;
        let mut total = 0;
        for _ in 0..30 {
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = idx.search("q", &q, 10).unwrap();
            let approx = idx.search_coarse(&coarse, "q", &q, 10, 16).unwrap();
            total += 10;
            found += exact
                .hits
                .iter()
                .filter(|h| approx.hits.iter().any(|a| a.abstract_id == h.abstract_id))
                .count();
        }
        assert!(found as f64 / total as f64 >= 0.99);
    }

    #[test]
    fn persistence_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let idx = random_index(&mut rng, 7, 3);
        let mut buf = Vec::new();
        idx.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DERX");
        assert_eq!(EvidenceIndex::read(buf.as_slice()).unwrap(), idx);
        assert!(EvidenceIndex::read(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn fingerprint_checked() {
        let enc = EncoderModel::new(4, 16, 1).unwrap();
        let abstracts = vec![EvidenceAbstract {
            id: "A".into(),
            title: "t".into(),
            text: "x".into(),
            populations: vec![],
            interventions: vec![],
            outcomes: vec![],
            population_tag: None,
        }];
        let idx = build_index(&enc, &abstracts).unwrap();
        let q = enc.encode("t");
        assert!(idx.search_checked(&enc, "q", &q, 1).is_ok());
        let other = EncoderModel::new(4, 16, 2).unwrap();
        let mut other = other;
        other.row_mut(0);
        assert!(matches!(
            idx.search_checked(&other, "q", &q, 1),
            Err(RetrieverError::FingerprintMismatch { .. })
        ));
        assert!(build_index(&enc, &[]).is_err());
    }
}
