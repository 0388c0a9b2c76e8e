use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::context::pair_context;
use super::encoder::{normalize, similarity, EncoderModel, SparseFeatures, GAIN_GROUPS};
use super::{Result, RetrieverError};
use crate::corpus::EvidenceAbstract;
use crate::hashing::{derive_seed, derive_seed_str};
use crate::pseudogen::PseudoPair;

/// Indices into the pair list; all members share one population tag and
/// have distinct positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub population_tag: String,
    pub members: Vec<usize>,
}

/// Population-pure batches of at most `batch_size` pairs. A pair whose
/// positive is already in the batch being filled waits for a later batch.
/// Leftovers smaller than two are dropped, as are populations with fewer
/// than two pairs; both cases add a warning.
pub fn make_batches(pairs: &[PseudoPair], batch_size: usize, seed: u64) -> (Vec<TrainBatch>, Vec<String>) {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.population_tag.as_str()).or_default().push(i);
    }
    let mut batches = Vec::new();
    let mut warnings = Vec::new();
    let batch_size = batch_size.max(2);
    for (tag, mut queue) in groups {
        if queue.len() < 2 {
            warnings.push(format!("population {tag}: fewer than two pairs, skipped"));
            continue;
        }
        queue.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_str(seed, tag)));
        while !queue.is_empty() {
            let mut members = Vec::new();
            let mut ids = HashSet::new();
            let mut deferred = Vec::new();
            for i in queue {
                if members.len() < batch_size && ids.insert(pairs[i].positive_abstract_id.as_str()) {
                    members.push(i);
                } else {
                    deferred.push(i);
                }
            }
            queue = deferred;
            if members.len() >= 2 {
                batches.push(TrainBatch {
                    population_tag: tag.to_string(),
                    members,
                });
            } else {
                warnings.push(format!(
                    "population {tag}: dropped {} pair(s) that could not fill a batch",
                    members.len()
                ));
            }
        }
    }
    (batches, warnings)
}

/// Gradient of one encoder: sparse over rows, dense over gains.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradient {
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub gains: Vec<f64>,
}

impl Default for EncoderGradient {
    fn default() -> Self {
        Self {
            rows: BTreeMap::new(),
            gains: vec![0.0; GAIN_GROUPS],
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn backprop(
    enc: &EncoderModel,
    feats: &SparseFeatures,
    pooled: &[f64],
    norm: f64,
    g_e: &[f64],
    out: &mut EncoderGradient,
) {
    if norm == 0.0 {
        return;
    }
    let d = enc.dim();
    let unit: Vec<f64> = pooled.iter().map(|x| x / norm).collect();
    let proj = similarity(&unit, g_e);
    let scale = (d as f64).sqrt() / norm;
    let g_s: Vec<f64> = g_e.iter().zip(&unit).map(|(g, u)| scale * (g - u * proj)).collect();
    for &(b, g, c) in &feats.entries {
        let gain = enc.gains()[g as usize];
        out.gains[g as usize] += c * similarity(&enc.row(b), &g_s);
        let row = out.rows.entry(b).or_insert_with(|| vec![0.0; d]);
        row.iter_mut().zip(&g_s).for_each(|(r, x)| *r += gain * c * x);
    }
}

/// Mean in-batch softmax NLL. Anchor `j` scores against every positive in
/// the batch; its own positive is the target.
pub fn batch_loss_and_gradients(
    enc_c: &EncoderModel,
    enc_d: &EncoderModel,
    contexts: &[SparseFeatures],
    positives: &[SparseFeatures],
) -> Result<(f64, EncoderGradient, EncoderGradient)> {
    let b = contexts.len();
    if b < 2 || positives.len() != b {
        return Err(RetrieverError::InvalidBatch(format!(
            "{b} contexts and {} positives",
            positives.len()
        )));
    }
    let pooled_c: Vec<Vec<f64>> = contexts.iter().map(|f| enc_c.pool(f)).collect();
    let pooled_d: Vec<Vec<f64>> = positives.iter().map(|f| enc_d.pool(f)).collect();
    let (emb_c, norm_c): (Vec<Vec<f64>>, Vec<f64>) = pooled_c.iter().map(|s| normalize(s)).unzip();
    let (emb_d, norm_d): (Vec<Vec<f64>>, Vec<f64>) = pooled_d.iter().map(|s| normalize(s)).unzip();

    let dim = enc_c.dim();
    let mut loss = 0.0;
    let mut g_c = vec![vec![0.0; dim]; b];
    let mut g_d = vec![vec![0.0; dim]; b];
    for j in 0..b {
        let scores: Vec<f64> = emb_d.iter().map(|d| similarity(&emb_c[j], d)).collect();
        let lse = log_sum_exp(&scores);
        loss += lse - scores[j];
        for l in 0..b {
            let coef = ((scores[l] - lse).exp() - if l == j { 1.0 } else { 0.0 }) / b as f64;
            for t in 0..dim {
                g_c[j][t] += coef * emb_d[l][t];
                g_d[l][t] += coef * emb_c[j][t];
            }
        }
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(RetrieverError::NumericalOverflow);
    }
    let mut grad_c = EncoderGradient::default();
    let mut grad_d = EncoderGradient::default();
    for j in 0..b {
        backprop(enc_c, &contexts[j], &pooled_c[j], norm_c[j], &g_c[j], &mut grad_c);
        backprop(enc_d, &positives[j], &pooled_d[j], norm_d[j], &g_d[j], &mut grad_d);
    }
    Ok((loss, grad_c, grad_d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverConfig {
    pub dim: usize,
    pub bucket_count: usize,
    pub epochs: usize,
    /// Step size for projection rows.
    pub step_size: f64,
    /// Step size for the segment and feature-kind gains.
    pub gain_step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            bucket_count: 1 << 18,
            epochs: 20,
            step_size: 1e-3,
            gain_step_size: 0.2,
            batch_size: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetrieverReport {
    /// Mean batch loss of the untrained encoders over the first epoch's batches.
    pub initial_loss: f64,
    /// Mean batch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub batches_per_epoch: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Adam with moments kept only for rows that have received a gradient.
struct LazyAdam {
    lr: f64,
    gain_lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    moments: HashMap<u32, (Vec<f64>, Vec<f64>)>,
    gain_moments: (Vec<f64>, Vec<f64>),
}

impl LazyAdam {
    fn new(lr: f64, gain_lr: f64) -> Self {
        Self {
            lr,
            gain_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: HashMap::new(),
            gain_moments: (vec![0.0; GAIN_GROUPS], vec![0.0; GAIN_GROUPS]),
        }
    }

    fn update(&self, x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64) {
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..x.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
    }

    fn step(&mut self, enc: &mut EncoderModel, grad: &EncoderGradient, t: i32) {
        let d = enc.dim();
        let mut moments = std::mem::take(&mut self.moments);
        for (&b, g) in &grad.rows {
            let (m, v) = moments.entry(b).or_insert_with(|| (vec![0.0; d], vec![0.0; d]));
            self.update(enc.row_mut(b), g, m, v, t, self.lr);
        }
        self.moments = moments;
        let (mut m, mut v) = std::mem::take(&mut self.gain_moments);
        self.update(enc.gains_mut(), &grad.gains, &mut m, &mut v, t, self.gain_lr);
        self.gain_moments = (m, v);
    }
}

/// The untrained context and evidence encoders: one seeded projection with
/// IDF weights fitted on the evidence documents, cloned.
pub fn initial_encoders(
    evidence: &[EvidenceAbstract],
    config: &RetrieverConfig,
) -> Result<(EncoderModel, EncoderModel)> {
    let init_seed = derive_seed_str(config.seed, "encoder-init");
    let mut enc = EncoderModel::new(config.dim, config.bucket_count, init_seed)?;
    let docs: Vec<String> = evidence.iter().map(EvidenceAbstract::document_text).collect();
    enc.fit_weights(&docs);
    Ok((enc.clone(), enc))
}

/// Both encoders start from the same seeded projection, weighted by IDF over
/// the evidence collection, and are then trained
/// on population-pure in-batch softmax batches, reshuffled every epoch.
pub fn train_retriever(
    pairs: &[PseudoPair],
    evidence: &[EvidenceAbstract],
    config: &RetrieverConfig,
) -> Result<(EncoderModel, EncoderModel, RetrieverReport)> {
    if pairs.is_empty() {
        return Err(RetrieverError::Empty("no training pairs".into()));
    }
    if !(config.step_size >= 0.0 && config.step_size.is_finite())
        || !(config.gain_step_size >= 0.0 && config.gain_step_size.is_finite())
    {
        return Err(RetrieverError::InvalidConfig(
            "step sizes must be finite and non-negative".into(),
        ));
    }
    if config.batch_size < 2 {
        return Err(RetrieverError::InvalidConfig("batch size must be at least 2".into()));
    }
    let (mut enc_c, mut enc_d) = initial_encoders(evidence, config)?;

    let by_id: HashMap<&str, &EvidenceAbstract> = evidence.iter().map(|a| (a.id.as_str(), a)).collect();
    for p in pairs {
        if !by_id.contains_key(p.positive_abstract_id.as_str()) {
            return Err(RetrieverError::UnknownAbstract(p.positive_abstract_id.clone()));
        }
    }
    let ctx_feats: Vec<SparseFeatures> = pairs.iter().map(|p| enc_c.features(&pair_context(p))).collect();
    let mut doc_cache: HashMap<&str, SparseFeatures> = HashMap::new();
    for p in pairs {
        doc_cache
            .entry(p.positive_abstract_id.as_str())
            .or_insert_with(|| enc_d.features(&by_id[p.positive_abstract_id.as_str()].document_text()));
    }
    let doc_of = |i: usize| &doc_cache[pairs[i].positive_abstract_id.as_str()];

    let mut report = RetrieverReport::default();
    let mut adam_c = LazyAdam::new(config.step_size, config.gain_step_size);
    let mut adam_d = LazyAdam::new(config.step_size, config.gain_step_size);
    let mut t = 0;
    let batch_inputs = |batch: &TrainBatch| -> (Vec<SparseFeatures>, Vec<SparseFeatures>) {
        (
            batch.members.iter().map(|&i| ctx_feats[i].clone()).collect(),
            batch.members.iter().map(|&i| doc_of(i).clone()).collect(),
        )
    };

    for epoch in 0..config.epochs.max(1) {
        let (batches, warnings) = make_batches(pairs, config.batch_size, derive_seed(config.seed, epoch as u64));
        if epoch == 0 {
            report.warnings = warnings;
            if batches.is_empty() {
                return Err(RetrieverError::Empty("no population has two pairs to batch".into()));
            }
            let mut total = 0.0;
            for batch in &batches {
                let (c, d) = batch_inputs(batch);
                total += batch_loss_and_gradients(&enc_c, &enc_d, &c, &d)?.0;
            }
            report.initial_loss = total / batches.len() as f64;
        }
        if config.epochs == 0 {
            break;
        }
        let mut total = 0.0;
        for batch in &batches {
            let (c, d) = batch_inputs(batch);
            let (loss, gc, gd) = batch_loss_and_gradients(&enc_c, &enc_d, &c, &d)?;
            total += loss;
            t += 1;
            adam_c.step(&mut enc_c, &gc, t);
            adam_d.step(&mut enc_d, &gd, t);
        }
        let mean = total / batches.len() as f64;
        log::info!("retriever epoch {epoch}: mean loss {mean:.6}");
        report.epoch_losses.push(mean);
        report.batches_per_epoch.push(batches.len());
    }
    Ok((enc_c, enc_d, report))
}
