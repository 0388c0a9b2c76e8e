//! Span taggers: three binary BIO CRFs for Claim, Experience and Question,
//! and one PIO CRF run over the post followed by a separator and the claim.

mod bundle;
mod crf;
mod features;
mod persist;
mod train;

use thiserror::Error;

pub use bundle::{
    evaluate_tagger, pio_example, stage1_examples, stage2_examples, tag_pio, tag_post, tag_spans, TaggerBundle,
    TaggerConfig, TaggerEvaluation, MODEL_ID,
};
pub use crf::{crf_nll_and_gradient, log_partition, viterbi_decode, BioLabel, CrfGradient, CrfModel, TagSet};
pub use features::{
    extract_features, pos_tag, FeatureExtractor, FeatureVector, PosTag, PosTagger, RulePosTagger, DEFAULT_UNITS,
};
pub use persist::{load_bundle, load_crf, read_crf, save_bundle, save_crf, write_crf, BUNDLE_FILES};
pub use train::{train_crf, TrainConfig, TrainReport, TrainingExample};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("position {position} out of range for {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("sequence has {features} positions but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("label index {0} not in tag set")]
    InvalidLabel(usize),
    #[error("numerical overflow")]
    NumericalOverflow,
    #[error("no training examples")]
    NoExamples,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TaggerError> = std::result::Result<T, E>;
