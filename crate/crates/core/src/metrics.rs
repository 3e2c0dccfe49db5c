//! Corpus-level BLEU-1..4, ROUGE-L and CIDEr.
//!
//! All scores are reported in percent. Per-record work runs on the current
//! rayon pool; every reduction is either an integer sum or a float sum over
//! values sorted by magnitude, so results do not depend on worker count or
//! record order.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text::{lcs_length, tokenize, TokenSequence};

pub const DEFAULT_BETA: f64 = 1.2;
pub const BLEU_ORDER: usize = 4;
pub const CIDER_ORDER: usize = 4;

/// Maps every token to its rank among the distinct tokens, so n-gram counting
/// compares integers and ids do not depend on record order.
fn intern(hyps: &[TokenSequence], refs: &[TokenSequence]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let all = || {
        hyps.iter()
            .chain(refs)
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    };
    let mut vocab: Vec<&str> = all().collect::<HashSet<_>>().into_iter().collect();
    vocab.sort_unstable();
    let ids: HashMap<&str, u32> = vocab.into_iter().zip(0..).collect();
    let map = |seqs: &[TokenSequence]| -> Vec<Vec<u32>> {
        seqs.par_iter()
            .map(|s| s.tokens.iter().map(|t| ids[t.as_str()]).collect())
            .collect()
    };
    (map(hyps), map(refs))
}

/// Distinct n-grams of `ids` with their counts, sorted by n-gram.
type GramCounts<'a> = Vec<(&'a [u32], u32)>;

fn gram_counts(ids: &[u32], n: usize) -> GramCounts<'_> {
    if ids.len() < n {
        return Vec::new();
    }
    let mut grams: Vec<&[u32]> = ids.windows(n).collect();
    grams.sort_unstable();
    let mut out: GramCounts = Vec::with_capacity(grams.len());
    for g in grams {
        match out.last_mut() {
            Some((last, c)) if *last == g => *c += 1,
            _ => out.push((g, 1)),
        }
    }
    out
}

/// Calls `f(a_count, b_count)` for every n-gram present in both lists.
fn merge_join(a: &GramCounts, b: &GramCounts, mut f: impl FnMut(u32, u32)) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                f(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
}

fn check_aligned(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::LengthMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

/// Float sum that is invariant under permutation of the inputs.
pub(crate) fn stable_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScores {
    /// Modified n-gram precisions p_1..p_max_n as fractions.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// BLEU-1..BLEU-max_n in percent.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

fn bleu_stats(hyp: &[u32], reference: &[u32], max_n: usize) -> BleuStats {
    let mut s = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    };
    for n in 1..=max_n {
        s.totals[n - 1] = (hyp.len() + 1).saturating_sub(n);
        let mut matches = 0;
        merge_join(&gram_counts(hyp, n), &gram_counts(reference, n), |h, r| {
            matches += h.min(r) as usize
        });
        s.matches[n - 1] = matches;
    }
    s
}

/// Corpus BLEU with reference-clipped counts and a corpus brevity penalty.
/// BLEU-k is the brevity penalty times the geometric mean of p_1..p_k; an
/// order with no matches (or no candidate n-grams) zeroes every BLEU-k above it.
pub fn bleu(hyps: &[TokenSequence], refs: &[TokenSequence], max_n: usize) -> Result<BleuScores> {
    check_aligned(hyps.len(), refs.len())?;
    if max_n == 0 {
        return Err(Error::InvalidParameter(
            "BLEU order must be at least 1".into(),
        ));
    }
    let (hyps, refs) = intern(hyps, refs);
    let parts: Vec<BleuStats> = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| bleu_stats(h, r, max_n))
        .collect();
    let mut total = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        ..Default::default()
    };
    for p in parts {
        for n in 0..max_n {
            total.matches[n] += p.matches[n];
            total.totals[n] += p.totals[n];
        }
        total.hyp_len += p.hyp_len;
        total.ref_len += p.ref_len;
    }

    let precisions: Vec<f64> = (0..max_n)
        .map(|n| {
            if total.totals[n] == 0 {
                0.0
            } else {
                total.matches[n] as f64 / total.totals[n] as f64
            }
        })
        .collect();
    let bp = if total.hyp_len == 0 {
        0.0
    } else if total.hyp_len >= total.ref_len {
        1.0
    } else {
        (1.0 - total.ref_len as f64 / total.hyp_len as f64).exp()
    };

    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut dead = false;
    for (k, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            dead = true;
        }
        if dead {
            scores.push(0.0);
            continue;
        }
        log_sum += p.ln();
        scores.push(100.0 * bp * (log_sum / (k + 1) as f64).exp());
    }
    Ok(BleuScores {
        precisions,
        brevity_penalty: bp,
        hyp_len: total.hyp_len,
        ref_len: total.ref_len,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    /// F-measure in percent.
    pub f: f64,
    /// Set when the hypothesis or reference was empty (score forced to 0).
    pub empty_input: bool,
}

/// LCS-based F-measure of one hypothesis against its reference.
pub fn rouge_l(hyp: &TokenSequence, reference: &TokenSequence, beta: f64) -> Result<RougeScore> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(rouge_l_unchecked(&hyp.tokens, &reference.tokens, beta))
}

fn rouge_l_unchecked(hyp: &[String], reference: &[String], beta: f64) -> RougeScore {
    if hyp.is_empty() || reference.is_empty() {
        return RougeScore {
            f: 0.0,
            empty_input: true,
        };
    }
    let lcs = lcs_length(hyp, reference);
    if lcs == 0 {
        return RougeScore {
            f: 0.0,
            empty_input: false,
        };
    }
    let recall = lcs as f64 / reference.len() as f64;
    let precision = lcs as f64 / hyp.len() as f64;
    let b2 = beta * beta;
    RougeScore {
        f: 100.0 * ((1.0 + b2) * recall * precision) / (recall + b2 * precision),
        empty_input: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RougeCorpus {
    /// Mean F-measure in percent.
    pub score: f64,
    pub per_record: Vec<RougeScore>,
    pub flagged: usize,
}

pub fn rouge_l_corpus(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
    beta: f64,
) -> Result<RougeCorpus> {
    check_aligned(hyps.len(), refs.len())?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let per_record: Vec<RougeScore> = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| rouge_l_unchecked(&h.tokens, &r.tokens, beta))
        .collect();
    let flagged = per_record.iter().filter(|s| s.empty_input).count();
    let score = stable_sum(per_record.iter().map(|s| s.f).collect()) / per_record.len() as f64;
    Ok(RougeCorpus {
        score,
        per_record,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiderScores {
    /// 100 × mean over records of the per-record CIDEr.
    pub score: f64,
    /// Per-record CIDEr: 10 × mean over n of the TF-IDF cosine.
    pub per_record: Vec<f64>,
}

/// An n-gram of at most four interned tokens packed into one integer key.
/// Orders never share a table, so the packing needs no length tag.
const _: () = assert!(CIDER_ORDER <= 4, "CIDEr n-grams are packed into 128 bits");

fn pack(g: &[u32]) -> u128 {
    g.iter().fold(0u128, |k, &t| (k << 32) | u128::from(t))
}

/// Packed n-grams with counts, sorted by key.
fn packed_counts(ids: &[u32], n: usize) -> Vec<(u128, u32)> {
    let mut keys: Vec<u128> = if ids.len() < n {
        Vec::new()
    } else {
        ids.windows(n).map(pack).collect()
    };
    keys.sort_unstable();
    let mut out: Vec<(u128, u32)> = Vec::with_capacity(keys.len());
    for k in keys {
        match out.last_mut() {
            Some((last, c)) if *last == k => *c += 1,
            _ => out.push((k, 1)),
        }
    }
    out
}

/// TF-IDF weights of one record's n-grams (sorted by key) and their norm.
fn tfidf(counts: &[(u128, u32)], df: &HashMap<u128, u32>, log_n: f64) -> (Vec<(u128, f64)>, f64) {
    let vec: Vec<(u128, f64)> = counts
        .iter()
        .map(|&(g, c)| {
            let d = df.get(&g).copied().unwrap_or(0).max(1);
            (g, c as f64 * (log_n - (d as f64).ln()))
        })
        .collect();
    let norm = vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    (vec, norm)
}

fn dot(a: &[(u128, f64)], b: &[(u128, f64)]) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Plain CIDEr with one reference per record. Document frequencies are
/// counted over the reference set, so the corpus needs at least two records.
pub fn cider(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<CiderScores> {
    check_aligned(hyps.len(), refs.len())?;
    if refs.len() < 2 {
        return Err(Error::CorpusTooSmall(refs.len()));
    }
    let log_n = (refs.len() as f64).ln();
    let (hyps, refs) = intern(hyps, refs);

    let ref_counts: Vec<Vec<Vec<(u128, u32)>>> = refs
        .par_iter()
        .map(|r| (1..=CIDER_ORDER).map(|n| packed_counts(r, n)).collect())
        .collect();
    // Each reference contributes its distinct n-grams once.
    let df: Vec<HashMap<u128, u32>> = (0..CIDER_ORDER)
        .map(|k| {
            let mut m = HashMap::new();
            for per_n in &ref_counts {
                for &(g, _) in &per_n[k] {
                    *m.entry(g).or_insert(0) += 1;
                }
            }
            m
        })
        .collect();

    let per_record: Vec<f64> = hyps
        .par_iter()
        .zip(ref_counts.par_iter())
        .map(|(h, r_counts)| {
            let mut sum = 0.0;
            for (n, (r, df)) in (1..=CIDER_ORDER).zip(r_counts.iter().zip(&df)) {
                let (hv, hnorm) = tfidf(&packed_counts(h, n), df, log_n);
                let (rv, rnorm) = tfidf(r, df, log_n);
                if hnorm == 0.0 || rnorm == 0.0 {
                    continue;
                }
                sum += dot(&hv, &rv) / (hnorm * rnorm);
            }
            10.0 * sum / CIDER_ORDER as f64
        })
        .collect();
    let score = 100.0 * stable_sum(per_record.clone()) / per_record.len() as f64;
    Ok(CiderScores { score, per_record })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub bleu: bool,
    pub rouge: bool,
    pub cider: bool,
}

impl MetricSet {
    pub const ALL: MetricSet = MetricSet {
        bleu: true,
        rouge: true,
        cider: true,
    };
}

impl Default for MetricSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for MetricSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut set = MetricSet {
            bleu: false,
            rouge: false,
            cider: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "bleu" => set.bleu = true,
                "rouge" | "rouge_l" | "rouge-l" => set.rouge = true,
                "cider" => set.cider = true,
                "all" => set = MetricSet::ALL,
                other => {
                    return Err(format!(
                        "unknown metric `{other}` (expected bleu, rouge, cider)"
                    ))
                }
            }
        }
        if !(set.bleu || set.rouge || set.cider) {
            return Err("metric list is empty".into());
        }
        Ok(set)
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.bleu, "bleu"),
            (self.rouge, "rouge"),
            (self.cider, "cider"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordScores {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_record: Option<Vec<RecordScores>>,
}

impl MetricReport {
    /// `(metric, value)` pairs in report order.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        [
            ("bleu1", self.bleu1),
            ("bleu2", self.bleu2),
            ("bleu3", self.bleu3),
            ("bleu4", self.bleu4),
            ("rouge_l", self.rouge_l),
            ("cider", self.cider),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "records\t{}", self.records)?;
        for (k, v) in self.rows() {
            writeln!(w, "{k}\t{v}")?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub metrics: MetricSet,
    pub beta: f64,
    pub per_record: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: MetricSet::ALL,
            beta: DEFAULT_BETA,
            per_record: false,
        }
    }
}

/// Tokenizes generated text and captions with the corpus language and scores
/// the selected metrics.
pub fn evaluate_corpus(corpus: &Corpus, opts: &EvalOptions) -> Result<MetricReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(r) = corpus.records.iter().find(|r| r.generated.is_none()) {
        return Err(Error::MissingGenerated(r.id.clone()));
    }
    let lang = corpus.language;
    let (hyps, refs): (Vec<TokenSequence>, Vec<TokenSequence>) = corpus
        .records
        .par_iter()
        .map(|r| {
            (
                tokenize(r.generated.as_deref().unwrap_or_default(), lang),
                tokenize(&r.caption, lang),
            )
        })
        .unzip();

    let mut report = MetricReport {
        records: corpus.len(),
        bleu1: None,
        bleu2: None,
        bleu3: None,
        bleu4: None,
        rouge_l: None,
        cider: None,
        per_record: None,
    };
    if opts.metrics.bleu {
        let b = bleu(&hyps, &refs, BLEU_ORDER)?;
        report.bleu1 = Some(b.scores[0]);
        report.bleu2 = Some(b.scores[1]);
        report.bleu3 = Some(b.scores[2]);
        report.bleu4 = Some(b.scores[3]);
    }
    let rouge = if opts.metrics.rouge {
        let r = rouge_l_corpus(&hyps, &refs, opts.beta)?;
        report.rouge_l = Some(r.score);
        Some(r.per_record)
    } else {
        None
    };
    let cider_scores = if opts.metrics.cider {
        let c = cider(&hyps, &refs)?;
        report.cider = Some(c.score);
        Some(c.per_record)
    } else {
        None
    };
    if opts.per_record {
        report.per_record = Some(
            corpus
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| RecordScores {
                    id: r.id.clone(),
                    rouge_l: rouge.as_ref().map(|s| s[i].f),
                    cider: cider_scores.as_ref().map(|s| s[i]),
                })
                .collect(),
        );
    }
    Ok(report)
}
