use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: invalid record: {violations}")]
    InvalidRecord { line: usize, violations: String },

    #[error("feature file {path}: {message}")]
    FeatureFormat { path: PathBuf, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus size {0} is too small, need at least 2 records")]
    CorpusTooSmall(usize),

    #[error("length mismatch: {hyps} hypotheses vs {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },

    #[error("record `{0}` has no generated text")]
    MissingGenerated(String),

    #[error("no ground-truth attribute mentions in corpus")]
    NoMentions,

    #[error("duplicate rating for rater `{rater}` on sample `{sample}`")]
    DuplicateRating { rater: String, sample: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-differentiable point: {0}")]
    NonDifferentiable(String),

    #[error("ontology file line {line}: {message}")]
    OntologyFormat { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
