//! Preprocessing and evaluation toolkit for multimodal advertisement
//! copywriting corpora.
//!
//! - [`corpus`]: record model, line-delimited corpus files, feature sidecars
//! - [`text`]: tokenization, n-grams, longest common subsequence
//! - [`ontology`]: value/key conceptualization and the corpus key lexicon
//! - [`filter`]: structured-information overlap screen
//! - [`metrics`]: BLEU-1..4, ROUGE-L, CIDEr
//! - [`faithfulness`]: attribute-level correct/error/unknown scoring, pass rates
//! - [`neural`]: generic-scalar forward math and gradient checks
//! - [`cli`]: the `adcopy` command line

pub mod cli;
pub mod corpus;
pub mod error;
pub mod faithfulness;
pub mod filter;
pub mod metrics;
pub mod neural;
pub mod ontology;
pub mod text;

pub use corpus::{
    load_corpus, validate_record, Corpus, Entry, FeatureMatrix, Record, StructuredInfo,
};
pub use error::{Error, Result};
pub use faithfulness::{
    hard_homologous, judge_record, pass_rate, CoreLabelSet, FaithfulnessReport,
};
pub use filter::{filter_corpus, overlap_count, FilterDecision};
pub use metrics::{bleu, cider, evaluate_corpus, rouge_l, MetricReport, MetricSet};
pub use neural::Scalar;
pub use ontology::{build_ontology, conceptualize, deconceptualize, prioritize_keys, Ontology};
pub use text::{lcs_length, ngrams, tokenize, Language, TokenSequence};

pub type Matrix64 = neural::Matrix<f64>;
pub type Matrix32 = neural::Matrix<f32>;
pub type VelParams64 = neural::VelParams<f64>;
pub type VelParams32 = neural::VelParams<f32>;
pub type BlockParams64 = neural::BlockParams<f64>;
pub type BlockParams32 = neural::BlockParams<f32>;
pub type DecoderParams64 = neural::DecoderParams<f64>;
pub type DecoderParams32 = neural::DecoderParams<f32>;
