//! Hashed n-gram linear encoder: IDF-weighted projection rows, summed with
//! a learned gain per segment and feature kind, L2-normalised and scaled to
//! norm `sqrt(d)`.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Result, RetrieverError};
use crate::corpus::tokenize;
use crate::hashing::{derive_seed, hash_bytes, hash_str};
use crate::SEP;

const MAGIC: &[u8; 4] = b"DENC";
const VERSION: u32 = 2;

/// Feature kinds: word unigrams and character 3-, 4- and 5-grams.
pub const FEATURE_KINDS: usize = 4;
const CHAR_NGRAMS: [usize; 3] = [3, 4, 5];
/// Segments with their own gains; later segments share the last one.
pub const GAIN_SEGMENTS: usize = 5;
/// One learned gain per `(segment, feature kind)`.
pub const GAIN_GROUPS: usize = FEATURE_KINDS * GAIN_SEGMENTS;

/// Hashed features of a text as `(bucket, gain group, weighted count)`,
/// sorted by group then bucket.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFeatures {
    pub entries: Vec<(u32, u8, f64)>,
}

impl SparseFeatures {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lowercased word tokens of every separator-delimited segment, with
/// punctuation-only tokens dropped.
pub fn words(text: &str) -> Vec<Vec<String>> {
    text.split(SEP)
        .map(|seg| {
            tokenize(seg)
                .into_iter()
                .filter(|t| t.text.chars().any(char::is_alphanumeric))
                .map(|t| t.text.to_lowercase())
                .collect()
        })
        .collect()
}

fn grouped_features(text: &str) -> Vec<(u8, String)> {
    let mut out = Vec::new();
    for (s, seg) in words(text).into_iter().enumerate() {
        let base = (s.min(GAIN_SEGMENTS - 1) * FEATURE_KINDS) as u8;
        for w in &seg {
            out.push((base, format!("w:{w}")));
            let chars: Vec<char> = format!("<{w}>").chars().collect();
            for (k, n) in CHAR_NGRAMS.into_iter().enumerate() {
                for gram in chars.windows(n) {
                    out.push((base + 1 + k as u8, format!("c:{}", gram.iter().collect::<String>())));
                }
            }
        }
    }
    out
}

/// Feature strings: word unigrams and character n-grams of `<word>`.
pub fn feature_strings(text: &str) -> Vec<String> {
    grouped_features(text).into_iter().map(|(_, f)| f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    dim: usize,
    bucket_count: usize,
    seed: u64,
    /// Rows that differ from their seeded initial value.
    rows: HashMap<u32, Vec<f64>>,
    /// Per-bucket inverse document frequency; buckets not listed get
    /// `default_weight`.
    weights: BTreeMap<u32, f64>,
    default_weight: f64,
    gains: Vec<f64>,
}

impl EncoderModel {
    pub fn new(dim: usize, bucket_count: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(RetrieverError::InvalidConfig(
                "embedding dimension must be positive".into(),
            ));
        }
        if !bucket_count.is_power_of_two() || bucket_count > 1 << 32 {
            return Err(RetrieverError::InvalidConfig(format!(
                "bucket count {bucket_count} is not a power of two"
            )));
        }
        Ok(Self {
            dim,
            bucket_count,
            seed,
            rows: HashMap::new(),
            weights: BTreeMap::new(),
            default_weight: 1.0,
            gains: vec![1.0; GAIN_GROUPS],
        })
    }

    /// Fits squared smoothed IDF weights `(ln((n + 1) / (df + 1)) + 1)^2`
    /// over `docs`. Unseen buckets get the weight of `df = 0`.
    pub fn fit_weights<S: AsRef<str>>(&mut self, docs: &[S]) {
        self.weights.clear();
        self.default_weight = 1.0;
        let mut df: BTreeMap<u32, usize> = BTreeMap::new();
        for d in docs {
            let buckets: std::collections::BTreeSet<u32> =
                self.features(d.as_ref()).entries.iter().map(|e| e.0).collect();
            for b in buckets {
                *df.entry(b).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = |df: f64| (((n + 1.0) / (df + 1.0)).ln() + 1.0).powi(2);
        self.default_weight = idf(0.0);
        self.weights = df.into_iter().map(|(b, c)| (b, idf(c as f64))).collect();
    }

    /// Copies another model's feature weights.
    pub fn share_weights(&mut self, other: &EncoderModel) {
        self.weights = other.weights.clone();
        self.default_weight = other.default_weight;
    }

    /// Gain per `(segment, feature kind)` group, all 1 at initialisation.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn gains_mut(&mut self) -> &mut [f64] {
        &mut self.gains
    }

    pub fn weight(&self, bucket: u32) -> f64 {
        self.weights.get(&bucket).copied().unwrap_or(self.default_weight)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn materialized_rows(&self) -> usize {
        self.rows.len()
    }

    /// Seeded initial row: i.i.d. normal entries with variance `1/d`.
    pub fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, bucket as u64));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * scale
            })
            .collect()
    }

    pub fn row(&self, bucket: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&bucket) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.initial_row(bucket)),
        }
    }

    /// Mutable row, materialised from its seeded initial value on first use.
    pub fn row_mut(&mut self, bucket: u32) -> &mut Vec<f64> {
        if !self.rows.contains_key(&bucket) {
            let init = self.initial_row(bucket);
            self.rows.insert(bucket, init);
        }
        self.rows.get_mut(&bucket).expect("row just inserted")
    }

    pub fn features(&self, text: &str) -> SparseFeatures {
        let mask = (self.bucket_count - 1) as u64;
        let mut counts: BTreeMap<(u8, u32), f64> = BTreeMap::new();
        for (g, f) in grouped_features(text) {
            *counts.entry((g, (hash_str(&f) & mask) as u32)).or_default() += 1.0;
        }
        SparseFeatures {
            entries: counts
                .into_iter()
                .map(|((g, b), c)| (b, g, c * self.weight(b)))
                .collect(),
        }
    }

    /// Unnormalised sum of feature rows.
    pub fn pool(&self, feats: &SparseFeatures) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for &(b, g, c) in &feats.entries {
            let c = c * self.gains[g as usize];
            for (s, r) in s.iter_mut().zip(self.row(b).iter()) {
                *s += c * r;
            }
        }
        s
    }

    pub fn encode_features(&self, feats: &SparseFeatures) -> Vec<f64> {
        normalize(&self.pool(feats)).0
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_features(&self.features(text))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.bucket_count as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.default_weight.to_le_bytes())?;
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for (b, x) in &self.weights {
            w.write_all(&b.to_le_bytes())?;
            w.write_all(&x.to_le_bytes())?;
        }
        for x in &self.gains {
            w.write_all(&x.to_le_bytes())?;
        }
        let mut keys: Vec<&u32> = self.rows.keys().collect();
        keys.sort_unstable();
        w.write_all(&(keys.len() as u64).to_le_bytes())?;
        for k in keys {
            w.write_all(&k.to_le_bytes())?;
            for x in &self.rows[k] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| RetrieverError::InvalidModel(m.to_string());
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| bad("truncated encoder file"))?;
            Ok(buf)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let u64_at = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        if u32_at(take(4)?) != VERSION {
            return Err(bad("unsupported encoder version"));
        }
        let dim = u32_at(take(4)?) as usize;
        let bucket_count = u64_at(take(8)?) as usize;
        let seed = u64_at(take(8)?);
        let mut model = Self::new(dim, bucket_count, seed)?;
        let f64_at = |b: Vec<u8>| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        model.default_weight = f64_at(take(8)?);
        let n = u64_at(take(8)?) as usize;
        for _ in 0..n {
            let b = u32_at(take(4)?);
            let x = f64_at(take(8)?);
            if b as usize >= bucket_count || !x.is_finite() {
                return Err(bad("bad feature weight"));
            }
            model.weights.insert(b, x);
        }
        for g in 0..GAIN_GROUPS {
            model.gains[g] = f64_at(take(8)?);
        }
        if !model.default_weight.is_finite() || model.gains.iter().any(|x| !x.is_finite()) {
            return Err(bad("bad feature weight"));
        }
        let n = u64_at(take(8)?) as usize;
        for _ in 0..n {
            let b = u32_at(take(4)?);
            if b as usize >= bucket_count {
                return Err(bad("row bucket out of range"));
            }
            let raw = take(8 * dim)?;
            let row: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if row.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite weight"));
            }
            model.rows.insert(b, row);
        }
        Ok(model)
    }

    /// Stable hash of the serialised model.
    pub fn fingerprint(&self) -> u64 {
        hash_bytes(&self.to_bytes())
    }
}

/// `sqrt(d) * s / |s|` and `|s|`; a zero vector maps to `sqrt(d) * e1`.
pub fn normalize(s: &[f64]) -> (Vec<f64>, f64) {
    let d = s.len() as f64;
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; s.len()];
        e[0] = d.sqrt();
        (e, 0.0)
    } else {
        (s.iter().map(|x| x * d.sqrt() / norm).collect(), norm)
    }
}

/// Dot product.
pub fn similarity(x: &[f64], d: &[f64]) -> f64 {
    x.iter().zip(d).map(|(a, b)| a * b).sum()
}
