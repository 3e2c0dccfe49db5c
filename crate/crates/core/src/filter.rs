//! Validity screen: keep records whose caption mentions enough structured
//! information.

use std::io::Write;

use rayon::prelude::*;

use crate::corpus::{Corpus, StructuredInfo};
use crate::ontology::tokenized_values;
use crate::text::{contains_phrase, tokenize, Language, TokenSequence};

pub const DEFAULT_THRESHOLD: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterDecision {
    pub id: String,
    pub overlap_count: usize,
    pub kept: bool,
    pub threshold: usize,
}

/// Number of structured-info entries whose value phrase occurs in the caption.
/// Each entry counts at most once however often its value repeats.
pub fn overlap_count(si: &StructuredInfo, caption: &TokenSequence) -> usize {
    tokenized_values(si, caption.language)
        .iter()
        .filter(|v| contains_phrase(&caption.tokens, v))
        .count()
}

pub(crate) fn record_overlap(r: &crate::corpus::Record, language: Language) -> usize {
    overlap_count(&r.structured_info, &tokenize(&r.caption, language))
}

/// Keeps records with `overlap_count >= threshold`, preserving order.
pub fn filter_corpus(corpus: &Corpus, threshold: usize) -> (Corpus, Vec<FilterDecision>) {
    let decisions: Vec<FilterDecision> = corpus
        .records
        .par_iter()
        .map(|r| {
            let overlap = record_overlap(r, corpus.language);
            FilterDecision {
                id: r.id.clone(),
                overlap_count: overlap,
                kept: overlap >= threshold,
                threshold,
            }
        })
        .collect();
    let records = corpus
        .records
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.kept)
        .map(|(r, _)| r.clone())
        .collect();
    (Corpus::new(records, corpus.language), decisions)
}

/// `id<TAB>overlap<TAB>kept` audit rows with a header line.
pub fn write_audit<W: Write>(decisions: &[FilterDecision], mut w: W) -> std::io::Result<()> {
    writeln!(w, "id\toverlap\tkept")?;
    for d in decisions {
        writeln!(w, "{}\t{}\t{}", d.id, d.overlap_count, d.kept)?;
    }
    w.flush()
}
