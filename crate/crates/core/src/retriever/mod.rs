//! Evidence retrieval: context strings, the dual encoder and its training,
//! exact search, BM25 and random baselines, ranking metrics and expert
//! judgment tooling.

mod bm25;
mod context;
mod encoder;
mod index;
mod judgments;
mod metrics;
mod train;

use thiserror::Error;

pub use bm25::{bm25_build, bm25_search, bm25_terms, Bm25Index, DEFAULT_B, DEFAULT_K1};
pub use context::{build_context, pair_context, split_context};
pub use encoder::{
    feature_strings, normalize, similarity, words, EncoderModel, SparseFeatures, FEATURE_KINDS, GAIN_GROUPS,
    GAIN_SEGMENTS,
};
pub use index::{build_index, CoarseIndex, EvidenceIndex, Hit, RankedList};
pub use judgments::{
    aggregate_judgments, cumulative_relevance_table, render_relevance_table, JudgmentSummary, RelevanceRow,
    DEFAULT_JUDGE_KS,
};
pub use metrics::{
    evaluate_ranking, format_run, random_baseline, PrecisionConvention, Qrels, RankingReport, Run, DEFAULT_KS,
};
pub use train::{
    batch_loss_and_gradients, initial_encoders, make_batches, train_retriever, EncoderGradient, RetrieverConfig,
    RetrieverReport, TrainBatch,
};

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid judgments: {0}")]
    InvalidJudgments(String),
    #[error("numerical overflow")]
    NumericalOverflow,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown abstract id {0}")]
    UnknownAbstract(String),
    #[error("query {0} has no relevance judgments")]
    UnknownQuery(String),
    #[error("index fingerprint {index:016x} does not match encoder fingerprint {encoder:016x}")]
    FingerprintMismatch { index: u64, encoder: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RetrieverError> = std::result::Result<T, E>;

/// Context and evidence encoders saved side by side.
pub fn save_encoders(dir: impl AsRef<std::path::Path>, context: &EncoderModel, evidence: &EncoderModel) -> Result<()> {
    let dir = dir.as_ref();
    let io = |path: &std::path::Path| {
        let path = path.display().to_string();
        move |source| RetrieverError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, enc) in [("context.denc", context), ("evidence.denc", evidence)] {
        let path = dir.join(name);
        std::fs::write(&path, enc.to_bytes()).map_err(io(&path))?;
    }
    Ok(())
}

pub fn load_encoders(dir: impl AsRef<std::path::Path>) -> Result<(EncoderModel, EncoderModel)> {
    let dir = dir.as_ref();
    let load = |name: &str| {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|source| RetrieverError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EncoderModel::read(bytes.as_slice())
    };
    Ok((load("context.denc")?, load("evidence.denc")?))
}
