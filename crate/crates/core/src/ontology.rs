//! Conceptualization: swapping attribute values in a caption for key
//! placeholders, the inverse substitution, key prioritization and the
//! corpus-wide key/value lexicon.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::{Corpus, StructuredInfo};
use crate::error::{Error, Result};
use crate::text::{find_phrase, tokenize, Language, TokenSequence};

pub const PLACEHOLDER_OPEN: char = '⟨';
pub const PLACEHOLDER_CLOSE: char = '⟩';

/// The single marker token standing in for `key`.
///
/// Whitespace and bracket characters inside the key become `_` so the marker
/// stays one token.
pub fn placeholder(key: &str) -> String {
    let mut s = String::with_capacity(key.len() + 8);
    s.push(PLACEHOLDER_OPEN);
    s.extend(key.chars().map(|c| {
        if c.is_whitespace() || c == PLACEHOLDER_OPEN || c == PLACEHOLDER_CLOSE {
            '_'
        } else {
            c
        }
    }));
    s.push(PLACEHOLDER_CLOSE);
    s
}

pub fn is_placeholder(token: &str) -> bool {
    token.len() > PLACEHOLDER_OPEN.len_utf8() + PLACEHOLDER_CLOSE.len_utf8()
        && token.starts_with(PLACEHOLDER_OPEN)
        && token.ends_with(PLACEHOLDER_CLOSE)
}

pub(crate) fn tokenized_values(si: &StructuredInfo, language: Language) -> Vec<Vec<String>> {
    si.entries
        .iter()
        .map(|e| tokenize(&e.value, language).tokens)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub start: usize,
    pub len: usize,
    pub key: String,
    pub value: Vec<String>,
}

/// Substitutions applied by [`conceptualize`], sorted by start, non-overlapping.
/// Starts index into the original token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubstitutionLog(pub Vec<Substitution>);

impl SubstitutionLog {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Substitution> {
        self.0.iter()
    }
}

/// Replaces structured-info value phrases in `gt` by key placeholders.
///
/// Matching is greedy: longer values claim tokens first, then leftmost
/// occurrences, then the higher-priority entry when two keys share a value.
/// Claimed spans never overlap.
pub fn conceptualize(gt: &TokenSequence, si: &StructuredInfo) -> (TokenSequence, SubstitutionLog) {
    let values = tokenized_values(si, gt.language);
    let ranks = si.priority_ranks();
    let tokens = &gt.tokens;

    // (len, start, rank, entry)
    let mut candidates = Vec::new();
    for (idx, value) in values.iter().enumerate() {
        let n = value.len();
        if n == 0 || n > tokens.len() {
            continue;
        }
        for start in 0..=tokens.len() - n {
            if tokens[start..start + n] == value[..] {
                candidates.push((n, start, ranks[idx], idx));
            }
        }
    }
    candidates.sort_by_key(|&(n, start, rank, _)| (Reverse(n), start, rank));

    let mut claimed = vec![false; tokens.len()];
    let mut subs = Vec::new();
    for (n, start, _, idx) in candidates {
        if claimed[start..start + n].iter().any(|&c| c) {
            continue;
        }
        claimed[start..start + n].iter_mut().for_each(|c| *c = true);
        subs.push(Substitution {
            start,
            len: n,
            key: si.entries[idx].key.clone(),
            value: values[idx].clone(),
        });
    }
    subs.sort_by_key(|s| s.start);

    let mut out = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for s in &subs {
        out.extend_from_slice(&tokens[pos..s.start]);
        out.push(placeholder(&s.key));
        pos = s.start + s.len;
    }
    out.extend_from_slice(&tokens[pos..]);

    (TokenSequence::new(out, gt.language), SubstitutionLog(subs))
}

/// Replaces placeholders whose key is in `si` by that key's tokenized value.
/// The first entry wins when a key repeats; unknown placeholders are kept.
pub fn deconceptualize(rc: &TokenSequence, si: &StructuredInfo) -> TokenSequence {
    let mut lookup: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in &si.entries {
        lookup
            .entry(placeholder(&e.key))
            .or_insert_with(|| tokenize(&e.value, rc.language).tokens);
    }
    let mut out = Vec::with_capacity(rc.len());
    for t in &rc.tokens {
        match lookup.get(t) {
            Some(value) if is_placeholder(t) => out.extend(value.iter().cloned()),
            _ => out.push(t.clone()),
        }
    }
    TokenSequence::new(out, rc.language)
}

/// Orders entries by where their value first appears in the summary; entries
/// absent from the summary follow in storage order.
pub fn prioritize_keys(si: &StructuredInfo, summary: &TokenSequence) -> StructuredInfo {
    let values = tokenized_values(si, summary.language);
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for (idx, v) in values.iter().enumerate() {
        match find_phrase(&summary.tokens, v) {
            Some(pos) => found.push((pos, idx)),
            None => missing.push(idx),
        }
    }
    found.sort();
    let priority = found.into_iter().map(|(_, i)| i).chain(missing).collect();
    StructuredInfo {
        entries: si.entries.clone(),
        priority: Some(priority),
    }
}

/// Key census and value→keys lexicon over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ontology {
    pub keys: BTreeSet<String>,
    pub value_lexicon: BTreeMap<Vec<String>, BTreeSet<String>>,
}

impl Ontology {
    pub fn insert(&mut self, key: &str, value: Vec<String>) {
        self.keys.insert(key.to_owned());
        if !value.is_empty() {
            self.value_lexicon
                .entry(value)
                .or_default()
                .insert(key.to_owned());
        }
    }

    /// Associative, commutative union.
    pub fn merge(mut self, other: Ontology) -> Ontology {
        self.keys.extend(other.keys);
        for (v, ks) in other.value_lexicon {
            self.value_lexicon.entry(v).or_default().extend(ks);
        }
        self
    }

    pub fn keys_for(&self, phrase: &[String]) -> Option<&BTreeSet<String>> {
        self.value_lexicon.get(phrase)
    }

    pub fn max_phrase_len(&self) -> usize {
        self.value_lexicon.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Sorted `phrase<TAB>key` lines. Keys without any value get an empty phrase.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut lines = Vec::new();
        let mut with_values = BTreeSet::new();
        for (phrase, keys) in &self.value_lexicon {
            let joined = phrase.join(" ");
            for k in keys {
                with_values.insert(k.as_str());
                lines.push(format!("{joined}\t{k}"));
            }
        }
        for k in &self.keys {
            if !with_values.contains(k.as_str()) {
                lines.push(format!("\t{k}"));
            }
        }
        lines.sort();
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Ontology> {
        let mut ont = Ontology::default();
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::OntologyFormat {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let (phrase, key) = line.split_once('\t').ok_or_else(|| Error::OntologyFormat {
                line: idx + 1,
                message: "expected `phrase<TAB>key`".into(),
            })?;
            if key.is_empty() || key.contains('\t') {
                return Err(Error::OntologyFormat {
                    line: idx + 1,
                    message: "key must be non-empty and tab-free".into(),
                });
            }
            ont.insert(
                key,
                phrase
                    .split(' ')
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect(),
            );
        }
        Ok(ont)
    }
}

/// Builds the key census and value lexicon. Values are tokenized with each
/// record's own language.
pub fn build_ontology(corpus: &Corpus) -> Result<Ontology> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus
        .records
        .par_iter()
        .fold(Ontology::default, |mut acc, r| {
            for e in &r.structured_info.entries {
                acc.insert(&e.key, tokenize(&e.value, r.language).tokens);
            }
            acc
        })
        .reduce(Ontology::default, Ontology::merge))
}
