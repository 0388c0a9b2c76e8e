use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::crf::{CrfModel, TagSet};
use super::features::FeatureVector;
use super::{Result, TaggerError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 30,
            step_size: 0.2,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Training objective before the first epoch and after each epoch.
    pub objectives: Vec<f64>,
    /// Step size used by each epoch.
    pub step_sizes: Vec<f64>,
    /// Epochs whose update was rolled back because the objective rose.
    pub reverted: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Mean NLL over `examples` plus `l2/2 * ||w||^2`.
pub fn objective(model: &CrfModel, examples: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += model.nll(&ex.features, &ex.labels)?;
    }
    Ok(total / examples.len() as f64 + 0.5 * model.l2 * model.squared_norm())
}

/// Unary rows decay lazily: `decay` is the product of all shrink factors so
/// far, and a row is brought up to date only when it is next read.
struct LazyDecay {
    decay: f64,
    row_decay: Vec<f64>,
}

impl LazyDecay {
    fn new(buckets: usize) -> Self {
        Self {
            decay: 1.0,
            row_decay: vec![1.0; buckets],
        }
    }

    fn catch_up(&mut self, model: &mut CrfModel, bucket: usize) {
        let k = model.num_labels();
        let factor = self.decay / self.row_decay[bucket];
        if factor != 1.0 {
            model.unary[bucket * k..(bucket + 1) * k]
                .iter_mut()
                .for_each(|w| *w *= factor);
        }
        self.row_decay[bucket] = self.decay;
    }

    fn flush(&mut self, model: &mut CrfModel) {
        for b in 0..self.row_decay.len() {
            self.catch_up(model, b);
        }
        self.decay = 1.0;
        self.row_decay.iter_mut().for_each(|d| *d = 1.0);
    }
}

/// Minibatch SGD on the averaged, L2-regularised NLL. After every epoch the
/// full objective is evaluated; an epoch that raises it is undone and the
/// step size halved, so reported objectives never increase.
pub fn train_crf(
    examples: &[TrainingExample],
    tag_set: TagSet,
    bucket_count: usize,
    units: Vec<String>,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainReport)> {
    let examples: Vec<TrainingExample> = examples.iter().filter(|e| !e.features.is_empty()).cloned().collect();
    if examples.is_empty() {
        return Err(TaggerError::NoExamples);
    }
    if !bucket_count.is_power_of_two() {
        return Err(TaggerError::InvalidModel(format!(
            "bucket count {bucket_count} is not a power of two"
        )));
    }
    let mut model = CrfModel::zeros(tag_set, bucket_count, config.l2, units);
    let mut report = TrainReport::default();
    if examples.iter().all(|e| e.labels.iter().all(|&y| y == 0)) {
        let msg = "every training label is O; the model will only predict O".to_string();
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    let mut current = objective(&model, &examples)?;
    report.objectives.push(current);

    let k = model.num_labels();
    let batch_size = config.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = config.step_size;
    let mut lazy = LazyDecay::new(bucket_count);

    for epoch in 0..config.epochs {
        let snapshot = model.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            for &i in chunk {
                for fv in &examples[i].features {
                    for &b in fv.buckets() {
                        lazy.catch_up(&mut model, b as usize);
                    }
                }
            }
            let mut grad = super::crf::SparseGradient::zeros(k);
            for &i in chunk {
                let (_, g) = model.sparse_nll(&examples[i].features, &examples[i].labels)?;
                for (b, row) in g.unary {
                    let acc = grad.unary.entry(b).or_insert_with(|| vec![0.0; k]);
                    acc.iter_mut().zip(&row).for_each(|(a, r)| *a += r);
                }
                for (a, r) in grad.transition.iter_mut().zip(&g.transition) {
                    *a += r;
                }
                for (a, r) in grad.start.iter_mut().zip(&g.start) {
                    *a += r;
                }
                for (a, r) in grad.end.iter_mut().zip(&g.end) {
                    *a += r;
                }
            }
            grad.scale(1.0 / chunk.len() as f64);

            // w <- (1 - step*l2) w - step*g
            let shrink = 1.0 - step * config.l2;
            lazy.decay *= shrink;
            for (b, row) in &grad.unary {
                let b = *b as usize;
                let w = &mut model.unary[b * k..(b + 1) * k];
                for (w, g) in w.iter_mut().zip(row) {
                    *w = shrink * *w - step * g;
                }
                lazy.row_decay[b] = lazy.decay;
            }
            let dense = [
                (&mut model.transition, &grad.transition),
                (&mut model.start, &grad.start),
                (&mut model.end, &grad.end),
            ];
            for (w, g) in dense {
                for (w, g) in w.iter_mut().zip(g) {
                    *w = shrink * *w - step * g;
                }
            }
            if lazy.decay < 1e-150 {
                lazy.flush(&mut model);
            }
        }
        lazy.flush(&mut model);

        report.step_sizes.push(step);
        let value = if model.all_finite() {
            objective(&model, &examples).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        if value > current {
            log::debug!("epoch {epoch}: objective rose to {value}, reverting");
            model = snapshot;
            report.reverted.push(epoch);
            step *= 0.5;
        } else {
            current = value;
        }
        log::debug!("epoch {epoch}: objective {current:.6}");
        report.objectives.push(current);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PrfCounts, SpanLabel};
    use crate::tagger::crf::viterbi_decode;

    /// Tokens between `<<` and `>>` sentinels form a span.
    fn sentinel_task(n: usize, seed: u64) -> Vec<TrainingExample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = crate::tagger::FeatureExtractor::new(1 << 12).unwrap();
        let ts = TagSet::binary(SpanLabel::Claim);
        (0..n)
            .map(|_| {
                let mut toks: Vec<String> = Vec::new();
                let mut spans = Vec::new();
                for _ in 0..rng.gen_range(1..4) {
                    for _ in 0..rng.gen_range(0..4) {
                        toks.push(format!("w{}", rng.gen_range(0..30)));
                    }
                    toks.push("<<".into());
                    let start = toks.len();
                    for _ in 0..rng.gen_range(1..4) {
                        toks.push(format!("w{}", rng.gen_range(0..30)));
                    }
                    spans.push(crate::corpus::Span::new(SpanLabel::Claim, start, toks.len()));
                    toks.push(">>".into());
                }
                let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
                TrainingExample {
                    features: fx.sequence(&refs),
                    labels: ts.encode(&spans, toks.len()),
                }
            })
            .collect()
    }

    #[test]
    fn learns_separable_task() {
        let train = sentinel_task(200, 1);
        let test = sentinel_task(100, 2);
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let (model, report) = train_crf(&train, TagSet::binary(SpanLabel::Claim), 1 << 12, vec![], &cfg).unwrap();
        assert!(report.objectives.windows(2).all(|w| w[1] <= w[0]));
        let mut counts = PrfCounts::default();
        for ex in &test {
            let (pred, _) = viterbi_decode(&model, &ex.features);
            let ts = &model.tag_set;
            counts.add(PrfCounts::from_spans(&ts.spans(&pred), &ts.spans(&ex.labels)));
        }
        assert!(counts.prf().f1 >= 0.95, "{:?}", counts.prf());
    }

    #[test]
    fn zero_epochs_is_zero_model() {
        let train = sentinel_task(5, 3);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, _) = train_crf(&train, TagSet::binary(SpanLabel::Claim), 1 << 12, vec![], &cfg).unwrap();
        assert_eq!(model.squared_norm(), 0.0);
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let train = sentinel_task(60, 4);
        let run = |l2| {
            let cfg = TrainConfig {
                l2,
                epochs: 8,
                ..TrainConfig::default()
            };
            train_crf(&train, TagSet::binary(SpanLabel::Claim), 1 << 12, vec![], &cfg)
                .unwrap()
                .0
                .squared_norm()
        };
        for l2 in [1e-3, 1e-2, 1e-1] {
            assert!(run(2.0 * l2) <= run(l2));
        }
    }

    #[test]
    fn deterministic_and_warns_on_all_outside() {
        let mut train = sentinel_task(20, 5);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let ts = TagSet::binary(SpanLabel::Claim);
        let a = train_crf(&train, ts.clone(), 1 << 12, vec![], &cfg).unwrap();
        let b = train_crf(&train, ts.clone(), 1 << 12, vec![], &cfg).unwrap();
        assert_eq!(a, b);
        for ex in &mut train {
            ex.labels.iter_mut().for_each(|y| *y = 0);
        }
        let (_, report) = train_crf(&train, ts, 1 << 12, vec![], &cfg).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(train_crf(&[], TagSet::pio(), 16, vec![], &cfg).is_err());
    }
}
