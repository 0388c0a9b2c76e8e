//! Exit-code classification.
//!
//! Commands return `anyhow::Error`. The first typed error found in the chain
//! decides whether the failure was caused by the input (exit 2) or by a
//! broken internal invariant (exit 3).

use std::fmt;

use medclaim::corpus::CorpusError;
use medclaim::pseudogen::PseudogenError;
use medclaim::retriever::RetrieverError;
use medclaim::tagger::TaggerError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Bad configuration, missing files, or arguments that cannot be honoured.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// A check on our own output that should never fail.
#[derive(Debug)]
pub struct InternalError(pub String);

impl fmt::Display for InternalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InternalError {}

macro_rules! input {
    ($($arg:tt)*) => {
        anyhow::Error::new($crate::error::InputError(format!($($arg)*)))
    };
}
pub(crate) use input;

fn classify_one(e: &(dyn std::error::Error + 'static)) -> Option<i32> {
    if e.is::<InputError>() || e.is::<std::io::Error>() || e.is::<ini::Error>() || e.is::<serde_json::Error>() {
        return Some(EXIT_INPUT);
    }
    if e.is::<InternalError>() {
        return Some(EXIT_INTERNAL);
    }
    if e.is::<CorpusError>() || e.is::<PseudogenError>() {
        return Some(EXIT_INPUT);
    }
    if let Some(t) = e.downcast_ref::<TaggerError>() {
        return Some(match t {
            TaggerError::NumericalOverflow => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        });
    }
    if let Some(r) = e.downcast_ref::<RetrieverError>() {
        return Some(match r {
            RetrieverError::NumericalOverflow | RetrieverError::InvalidBatch(_) => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        });
    }
    None
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain().find_map(classify_one).unwrap_or(EXIT_INTERNAL)
}
