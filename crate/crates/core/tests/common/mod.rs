//! Brute-force reference implementations and synthetic data generators shared
//! by the integration tests. The oracles favour obviousness over speed: dense
//! vectors, linear scans and memoized recursion instead of hash maps and DP.

#![allow(dead_code)]

use std::collections::HashMap;

use adcopy::corpus::{Corpus, Entry, Record, StructuredInfo};
use adcopy::text::{Language, TokenSequence};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "red", "shoe", "soft", "cotton", "summer", "nike", "bag", "new",
];

pub fn seq(words: &[String]) -> TokenSequence {
    TokenSequence::new(words.to_vec(), Language::En)
}

pub fn random_tokens<R: Rng>(rng: &mut R, vocab: &[&str], max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| vocab.choose(rng).unwrap().to_string())
        .collect()
}

/// Aligned hypothesis/reference lists with 2..=max_records records. Small
/// vocabularies and frequent near-copies keep higher-order matches common.
pub fn random_pairs<R: Rng>(
    rng: &mut R,
    max_records: usize,
    max_len: usize,
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let n = rng.gen_range(2..=max_records);
    let vocab = &WORDS[..rng.gen_range(2..=WORDS.len())];
    let mut hyps = Vec::with_capacity(n);
    let mut refs = Vec::with_capacity(n);
    for _ in 0..n {
        let r = random_tokens(rng, vocab, max_len);
        let h = if rng.gen_bool(0.4) {
            let mut h = r.clone();
            if !h.is_empty() && rng.gen_bool(0.5) {
                let i = rng.gen_range(0..h.len());
                h[i] = vocab.choose(rng).unwrap().to_string();
            }
            h.truncate(max_len);
            h
        } else {
            random_tokens(rng, vocab, max_len)
        };
        hyps.push(h);
        refs.push(r);
    }
    (hyps, refs)
}

/// Every contiguous n-token window, with repeats.
pub fn windows(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].to_vec())
        .collect()
}

fn occurrences(list: &[Vec<String>], gram: &[String]) -> usize {
    list.iter().filter(|g| g.as_slice() == gram).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Corpus BLEU-1..max_n in percent: clipped counts summed over the corpus,
/// brevity penalty min(1, exp(1 - r/c)), plain product of precisions.
pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Vec<f64> {
    let mut p = Vec::new();
    for n in 1..=max_n {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            let hw = windows(h, n);
            let rw = windows(r, n);
            total += hw.len();
            for g in distinct(&hw) {
                clipped += occurrences(&hw, &g).min(occurrences(&rw, &g));
            }
        }
        p.push(if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        });
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp().min(1.0)
    };
    (1..=max_n)
        .map(|k| {
            let prod: f64 = p[..k].iter().product();
            if prod == 0.0 {
                0.0
            } else {
                100.0 * bp * prod.powf(1.0 / k as f64)
            }
        })
        .collect()
}

fn lcs_memo(
    a: &[String],
    b: &[String],
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    if i == a.len() || j == b.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i] == b[j] {
        1 + lcs_memo(a, b, i + 1, j + 1, memo)
    } else {
        lcs_memo(a, b, i + 1, j, memo).max(lcs_memo(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), v);
    v
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    lcs_memo(a, b, 0, 0, &mut HashMap::new())
}

/// ROUGE-L F in percent for one pair.
pub fn oracle_rouge(h: &[String], r: &[String], beta: f64) -> f64 {
    let l = oracle_lcs(h, r);
    if l == 0 {
        return 0.0;
    }
    let rec = l as f64 / r.len() as f64;
    let prec = l as f64 / h.len() as f64;
    100.0 * (1.0 + beta * beta) * rec * prec / (rec + beta * beta * prec)
}

pub fn oracle_rouge_corpus(hyps: &[Vec<String>], refs: &[Vec<String>], beta: f64) -> f64 {
    let s: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| oracle_rouge(h, r, beta))
        .sum();
    s / hyps.len() as f64
}

/// (corpus score, per-record scores): dense TF-IDF vectors over the union of
/// all n-grams seen, df over references, 10 × mean cosine per record.
pub fn oracle_cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> (f64, Vec<f64>) {
    let docs = refs.len() as f64;
    let mut per_record = vec![0.0; hyps.len()];
    for n in 1..=4 {
        let mut vocab: Vec<Vec<String>> = Vec::new();
        for t in hyps.iter().chain(refs) {
            for g in windows(t, n) {
                if !vocab.contains(&g) {
                    vocab.push(g);
                }
            }
        }
        let idf: Vec<f64> = vocab
            .iter()
            .map(|g| {
                let df = refs.iter().filter(|r| windows(r, n).contains(g)).count();
                docs.ln() - (df.max(1) as f64).ln()
            })
            .collect();
        let dense = |t: &[String]| -> Vec<f64> {
            let w = windows(t, n);
            vocab
                .iter()
                .zip(&idf)
                .map(|(g, idf)| occurrences(&w, g) as f64 * idf)
                .collect()
        };
        for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
            let hv = dense(h);
            let rv = dense(r);
            let dot: f64 = hv.iter().zip(&rv).map(|(a, b)| a * b).sum();
            let hn = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rn = rv.iter().map(|a| a * a).sum::<f64>().sqrt();
            if hn > 0.0 && rn > 0.0 {
                per_record[i] += dot / (hn * rn);
            }
        }
    }
    let per_record: Vec<f64> = per_record.into_iter().map(|s| 10.0 * s / 4.0).collect();
    let score = 100.0 * per_record.iter().sum::<f64>() / per_record.len() as f64;
    (score, per_record)
}

/// Contiguous-phrase test by exhaustive window comparison.
pub fn oracle_contains(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && windows(tokens, phrase.len()).iter().any(|w| w == phrase)
}

pub fn oracle_overlap(r: &Record) -> usize {
    let caption: Vec<String> = r.caption.split_whitespace().map(str::to_owned).collect();
    r.structured_info
        .entries
        .iter()
        .filter(|e| {
            let v: Vec<String> = e.value.split_whitespace().map(str::to_owned).collect();
            oracle_contains(&caption, &v)
        })
        .count()
}

/// English corpus over lowercase space-separated words, so whitespace
/// splitting matches the tokenizer exactly.
pub fn random_filter_corpus<R: Rng>(rng: &mut R, records: usize) -> Corpus {
    let keys = [
        "brand", "color", "material", "season", "style", "fit", "size", "pattern",
    ];
    let recs = (0..records)
        .map(|i| {
            let n_si = rng.gen_range(1..=keys.len());
            let entries: Vec<Entry> = keys[..n_si]
                .iter()
                .map(|k| {
                    let len = rng.gen_range(1..=2);
                    let v: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
                    Entry::new(*k, v.join(" "))
                })
                .collect();
            let mut caption = random_tokens(rng, WORDS, 20);
            if caption.is_empty() {
                caption.push("new".into());
            }
            Record::new(
                format!("r{i}"),
                Language::En,
                "summary",
                StructuredInfo::new(entries),
                caption.join(" "),
            )
        })
        .collect();
    Corpus::new(recs, Language::En)
}

/// Caption plus structured info where distinct keys map to distinct values
/// and no caption token is a placeholder.
pub fn random_round_trip_fixture<R: Rng>(rng: &mut R) -> (TokenSequence, StructuredInfo) {
    let zh = rng.gen_bool(0.3);
    let vocab: &[&str] = if zh {
        &["红", "色", "棉", "鞋", "夏", "新", "款", "裙"]
    } else {
        WORDS
    };
    let lang = if zh { Language::Zh } else { Language::En };
    let n_keys = rng.gen_range(0..6);
    let mut values: Vec<Vec<String>> = Vec::new();
    while values.len() < n_keys {
        let len = rng.gen_range(1..=3);
        let v: Vec<String> = (0..len)
            .map(|_| vocab.choose(rng).unwrap().to_string())
            .collect();
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let entries: Vec<Entry> = values
        .iter()
        .enumerate()
        .map(|(i, v)| Entry::new(format!("key{i}"), v.join(if zh { "" } else { " " })))
        .collect();
    let mut caption = random_tokens(rng, vocab, 12);
    // Plant some values so substitutions actually happen.
    for v in &values {
        if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..=caption.len());
            caption.splice(at..at, v.iter().cloned());
        }
    }
    let mut si = StructuredInfo::new(entries);
    if si.len() > 1 && rng.gen_bool(0.5) {
        let mut order: Vec<usize> = (0..si.len()).collect();
        order.shuffle(rng);
        si.priority = Some(order);
    }
    (TokenSequence::new(caption, lang), si)
}

/// Records of roughly `tokens` caption tokens each, generated text being a
/// perturbed copy of the caption. Written as a corpus file by the caller.
pub fn large_eval_corpus<R: Rng>(rng: &mut R, records: usize, tokens: usize) -> Corpus {
    let vocab: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let recs = (0..records)
        .map(|i| {
            let len = rng.gen_range(tokens - 10..=tokens + 10);
            let caption: Vec<&str> = (0..len)
                .map(|_| vocab.choose(rng).unwrap().as_str())
                .collect();
            let mut generated = caption.clone();
            for g in generated.iter_mut() {
                if rng.gen_bool(0.3) {
                    *g = vocab.choose(rng).unwrap();
                }
            }
            Record::new(
                format!("p{i:05}"),
                Language::En,
                "summary",
                StructuredInfo::from_pairs(&[("brand", caption[0])]),
                caption.join(" "),
            )
            .with_generated(generated.join(" "))
        })
        .collect();
    Corpus::new(recs, Language::En)
}
