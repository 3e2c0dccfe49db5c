//! Attribute-level faithfulness of generated copy.
//!
//! Every structured-info value that appears in the ground-truth caption is an
//! attribute mention. A mention is *correct* when the generated text repeats
//! the value, an *error* when the key is a core label and the generated text
//! carries a different value known (via the ontology lexicon) to belong to
//! that key, and *unknown* otherwise.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, StructuredInfo};
use crate::error::{Error, Result};
use crate::ontology::{tokenized_values, Ontology};
use crate::text::{find_phrase, tokenize, TokenSequence};

pub const DEFAULT_CORE_LABELS: [&str; 6] =
    ["brand", "color", "material", "people", "time", "season"];

/// Case-folded key names whose conflicts count as errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreLabelSet(Vec<String>);

impl CoreLabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for l in labels {
            let folded = l.as_ref().trim().to_lowercase();
            if folded.is_empty() {
                return Err(Error::InvalidParameter("empty core label".into()));
            }
            if !seen.insert(folded.clone()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate core label `{folded}`"
                )));
            }
            out.push(folded);
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("core label set is empty".into()));
        }
        Ok(CoreLabelSet(out))
    }

    /// No core labels: every non-correct mention is unknown.
    pub fn none() -> Self {
        CoreLabelSet(Vec::new())
    }

    pub fn contains(&self, key: &str) -> bool {
        let folded = key.to_lowercase();
        self.0.contains(&folded)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

impl Default for CoreLabelSet {
    fn default() -> Self {
        CoreLabelSet(DEFAULT_CORE_LABELS.iter().map(|s| s.to_string()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub entry: usize,
    pub key: String,
    pub value: Vec<String>,
}

/// Entries whose value occurs in `caption`, ordered by first occurrence.
pub fn extract_attribute_mentions(caption: &TokenSequence, si: &StructuredInfo) -> Vec<Mention> {
    let mut found: Vec<(usize, usize, Vec<String>)> = tokenized_values(si, caption.language)
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| find_phrase(&caption.tokens, &v).map(|pos| (pos, i, v)))
        .collect();
    found.sort_by_key(|(pos, i, _)| (*pos, *i));
    found
        .into_iter()
        .map(|(_, entry, value)| Mention {
            entry,
            key: si.entries[entry].key.clone(),
            value,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Error,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Error => "error",
            Verdict::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeVerdict {
    pub id: String,
    pub key: String,
    pub gt_value: String,
    pub verdict: Verdict,
    /// Generated phrase contradicting the ground truth; set iff `verdict` is `Error`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conflict: Option<String>,
}

/// Leftmost (then longest) phrase of `gen` other than `value` that the
/// lexicon files under `key`.
fn find_conflict(
    gen: &[String],
    key: &str,
    value: &[String],
    ontology: &Ontology,
) -> Option<Vec<String>> {
    let max_len = ontology.max_phrase_len();
    for start in 0..gen.len() {
        for len in (1..=max_len.min(gen.len() - start)).rev() {
            let phrase = &gen[start..start + len];
            if phrase == value {
                continue;
            }
            if ontology.keys_for(phrase).is_some_and(|ks| ks.contains(key)) {
                return Some(phrase.to_vec());
            }
        }
    }
    None
}

pub fn judge_record(
    id: &str,
    gt: &TokenSequence,
    gen: &TokenSequence,
    si: &StructuredInfo,
    ontology: &Ontology,
    core: &CoreLabelSet,
) -> Vec<AttributeVerdict> {
    extract_attribute_mentions(gt, si)
        .into_iter()
        .map(|m| {
            let (verdict, conflict) = if find_phrase(&gen.tokens, &m.value).is_some() {
                (Verdict::Correct, None)
            } else if core.contains(&m.key) {
                match find_conflict(&gen.tokens, &m.key, &m.value, ontology) {
                    Some(c) => (Verdict::Error, Some(c.join(" "))),
                    None => (Verdict::Unknown, None),
                }
            } else {
                (Verdict::Unknown, None)
            };
            AttributeVerdict {
                id: id.to_owned(),
                key: m.key,
                gt_value: m.value.join(" "),
                verdict,
                conflict,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VerdictCounts {
    pub correct: usize,
    pub error: usize,
    pub unknown: usize,
}

impl VerdictCounts {
    pub fn total(&self) -> usize {
        self.correct + self.error + self.unknown
    }

    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Correct => self.correct += 1,
            Verdict::Error => self.error += 1,
            Verdict::Unknown => self.unknown += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessReport {
    pub correct_rate: f64,
    pub error_rate: f64,
    pub unknown_rate: f64,
    pub total_mentions: usize,
    pub counts: VerdictCounts,
    pub per_key: BTreeMap<String, VerdictCounts>,
}

impl FaithfulnessReport {
    pub fn from_verdicts(verdicts: &[AttributeVerdict]) -> Result<Self> {
        let mut counts = VerdictCounts::default();
        let mut per_key: BTreeMap<String, VerdictCounts> = BTreeMap::new();
        for v in verdicts {
            counts.add(v.verdict);
            per_key.entry(v.key.clone()).or_default().add(v.verdict);
        }
        let total = counts.total();
        if total == 0 {
            return Err(Error::NoMentions);
        }
        let pct = |c: usize| 100.0 * c as f64 / total as f64;
        Ok(FaithfulnessReport {
            correct_rate: pct(counts.correct),
            error_rate: pct(counts.error),
            unknown_rate: pct(counts.unknown),
            total_mentions: total,
            counts,
            per_key,
        })
    }
}

/// Judges every record and returns the verdicts in corpus order.
pub fn judge_corpus(
    corpus: &Corpus,
    ontology: &Ontology,
    core: &CoreLabelSet,
) -> Result<Vec<AttributeVerdict>> {
    if let Some(r) = corpus.records.iter().find(|r| r.generated.is_none()) {
        return Err(Error::MissingGenerated(r.id.clone()));
    }
    let lang = corpus.language;
    let per_record: Vec<Vec<AttributeVerdict>> = corpus
        .records
        .par_iter()
        .map(|r| {
            let gt = tokenize(&r.caption, lang);
            let gen = tokenize(r.generated.as_deref().unwrap_or_default(), lang);
            judge_record(&r.id, &gt, &gen, &r.structured_info, ontology, core)
        })
        .collect();
    Ok(per_record.into_iter().flatten().collect())
}

pub fn hard_homologous(
    corpus: &Corpus,
    ontology: &Ontology,
    core: &CoreLabelSet,
) -> Result<FaithfulnessReport> {
    FaithfulnessReport::from_verdicts(&judge_corpus(corpus, ontology, core)?)
}

/// `id, key, gt value, verdict, conflict` rows with a header line.
pub fn write_verdicts_tsv<W: Write>(
    verdicts: &[AttributeVerdict],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "id\tkey\tgt_value\tverdict\tconflict")?;
    for v in verdicts {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            v.id,
            v.key,
            v.gt_value,
            v.verdict.as_str(),
            v.conflict.as_deref().unwrap_or("")
        )?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub rater: String,
    pub sample: String,
    pub passed: bool,
}

/// Percentage of passed samples per rater.
pub fn pass_rate(ratings: &[Rating]) -> Result<BTreeMap<String, f64>> {
    let mut seen = BTreeSet::new();
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in ratings {
        if !seen.insert((r.rater.as_str(), r.sample.as_str())) {
            return Err(Error::DuplicateRating {
                rater: r.rater.clone(),
                sample: r.sample.clone(),
            });
        }
        let t = tally.entry(r.rater.clone()).or_default();
        t.0 += usize::from(r.passed);
        t.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|(k, (p, n))| (k, 100.0 * p as f64 / n as f64))
        .collect())
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "pass" | "passed" => Some(true),
        "0" | "false" | "no" | "fail" | "failed" => Some(false),
        _ => None,
    }
}

/// Reads `rater<TAB>sample<TAB>passed` rows. A first line starting with
/// `rater`, or one that does not parse as a rating, is taken as a header.
pub fn read_ratings<R: BufRead>(r: R) -> Result<Vec<Rating>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if idx == 0
            && fields
                .first()
                .map(|f| f.trim().eq_ignore_ascii_case("rater"))
                == Some(true)
        {
            continue;
        }
        let parsed = match fields.as_slice() {
            [rater, sample, flag] => parse_flag(flag).map(|passed| Rating {
                rater: rater.to_string(),
                sample: sample.to_string(),
                passed,
            }),
            _ => None,
        };
        match parsed {
            Some(r) => out.push(r),
            None if idx == 0 => continue,
            None => {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    message: "expected `rater<TAB>sample<TAB>passed`".into(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Language;

    fn seq(ws: &[&str]) -> TokenSequence {
        TokenSequence::from_words(ws, Language::En)
    }

    fn lexicon(pairs: &[(&str, &str)]) -> Ontology {
        let mut o = Ontology::default();
        for (v, k) in pairs {
            o.insert(k, tokenize(v, Language::En).tokens);
        }
        o
    }

    #[test]
    fn mentions_in_caption_order_once_each() {
        let si = StructuredInfo::from_pairs(&[("color", "white"), ("brand", "Adidas")]);
        let m = extract_attribute_mentions(&seq(&["adidas", "in", "white", "adidas"]), &si);
        let keys: Vec<_> = m.iter().map(|m| m.key.as_str()).collect();
        assert_eq!(keys, ["brand", "color"]);
        assert!(extract_attribute_mentions(&seq(&["plain", "shoes"]), &si).is_empty());
    }

    #[test]
    fn verdict_examples() {
        let ont = lexicon(&[
            ("adidas", "brand"),
            ("nike", "brand"),
            ("children", "people"),
        ]);
        let core = CoreLabelSet::default();
        let si = StructuredInfo::from_pairs(&[("brand", "Adidas")]);
        let gt = seq(&["adidas", "running", "shoes"]);

        let v = judge_record("r", &gt, &seq(&["adidas", "shoes"]), &si, &ont, &core);
        assert_eq!(v[0].verdict, Verdict::Correct);
        assert_eq!(v[0].conflict, None);

        let v = judge_record("r", &gt, &seq(&["nike", "shoes"]), &si, &ont, &core);
        assert_eq!(v[0].verdict, Verdict::Error);
        assert_eq!(v[0].conflict.as_deref(), Some("nike"));

        let si = StructuredInfo::from_pairs(&[("people", "children")]);
        let v = judge_record(
            "r",
            &seq(&["for", "children"]),
            &seq(&["soft", "toy"]),
            &si,
            &ont,
            &core,
        );
        assert_eq!(v[0].verdict, Verdict::Unknown);
    }

    #[test]
    fn non_core_conflicts_are_unknown() {
        let ont = lexicon(&[("round", "shape"), ("square", "shape")]);
        let si = StructuredInfo::from_pairs(&[("shape", "round")]);
        let v = judge_record(
            "r",
            &seq(&["round", "table"]),
            &seq(&["square", "table"]),
            &si,
            &ont,
            &CoreLabelSet::default(),
        );
        assert_eq!(v[0].verdict, Verdict::Unknown);
        let core = CoreLabelSet::new(["Shape"]).unwrap();
        let v = judge_record(
            "r",
            &seq(&["round", "table"]),
            &seq(&["square", "table"]),
            &si,
            &ont,
            &core,
        );
        assert_eq!(v[0].verdict, Verdict::Error);
    }

    #[test]
    fn core_label_validation() {
        assert!(CoreLabelSet::new(Vec::<String>::new()).is_err());
        assert!(CoreLabelSet::new(["brand", "Brand"]).is_err());
        assert!(CoreLabelSet::default().contains("COLOR"));
        assert_eq!(CoreLabelSet::default().labels().len(), 6);
    }

    fn ratings(rater: &str, passed: usize, total: usize) -> Vec<Rating> {
        (0..total)
            .map(|i| Rating {
                rater: rater.into(),
                sample: format!("s{i}"),
                passed: i < passed,
            })
            .collect()
    }

    #[test]
    fn pass_rates() {
        let mut all = ratings("annotator1", 84, 200);
        all.extend(ratings("all", 5, 5));
        all.extend(ratings("none", 0, 5));
        let rates = pass_rate(&all).unwrap();
        assert_eq!(rates["annotator1"], 42.0);
        assert_eq!(rates["all"], 100.0);
        assert_eq!(rates["none"], 0.0);
        all.push(all[0].clone());
        assert!(matches!(
            pass_rate(&all),
            Err(Error::DuplicateRating { .. })
        ));
    }

    #[test]
    fn rating_file() {
        let text = "rater\tsample\tpassed\na\t1\t1\na\t2\tfalse\nb\t1\tyes\n";
        let r = read_ratings(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert!(!r[1].passed);
        assert!(read_ratings("a\t1\t1\nbad line\n".as_bytes()).is_err());
    }
}
