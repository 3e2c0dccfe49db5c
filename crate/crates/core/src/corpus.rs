//! Record data model and the line-delimited corpus format.
//!
//! Each line of a corpus file is one JSON object. Fields the toolkit does not
//! know about are carried through untouched. Visual features live in a binary
//! sidecar referenced by a path relative to the corpus file; see `FORMATS.md`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::text::Language;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub key: String,
    pub value: String,
}

impl Entry {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Entry {
            key: key.into(),
            value: value.into(),
        }
    }
}

/// Ordered attribute key/value pairs of one product.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredInfo {
    pub entries: Vec<Entry>,
    /// Entry indices in priority order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Vec<usize>>,
}

impl StructuredInfo {
    pub fn new(entries: Vec<Entry>) -> Self {
        StructuredInfo {
            entries,
            priority: None,
        }
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self::new(pairs.iter().map(|(k, v)| Entry::new(*k, *v)).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices in priority order, falling back to storage order.
    pub fn priority_order(&self) -> Vec<usize> {
        match &self.priority {
            Some(p) if is_permutation(p, self.entries.len()) => p.clone(),
            _ => (0..self.entries.len()).collect(),
        }
    }

    /// rank[i] = position of entry i in the priority order.
    pub fn priority_ranks(&self) -> Vec<usize> {
        let order = self.priority_order();
        let mut rank = vec![0; order.len()];
        for (pos, &idx) in order.iter().enumerate() {
            rank[idx] = pos;
        }
        rank
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in p {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Row-major visual feature matrix, one row per frame or clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let m = FeatureMatrix { rows, cols, data };
        m.check().map_err(|message| Error::FeatureFormat {
            path: PathBuf::new(),
            message,
        })?;
        Ok(m)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.rows == 0 || self.cols == 0 {
            return Err(format!("empty shape {}x{}", self.rows, self.cols));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(format!(
                "expected {} values for {}x{}, found {}",
                self.rows * self.cols,
                self.rows,
                self.cols,
                self.data.len()
            ));
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(format!("non-finite entry at index {i}"));
        }
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Header: u32 rows, u32 cols (little endian); then rows*cols f32 LE.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|e| format!("short header: {e}"))?;
        let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or("shape overflows")?;
        if bytes.len() != expected {
            return Err(format!(
                "expected {expected} payload bytes for {rows}x{cols}, found {}",
                bytes.len()
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = FeatureMatrix { rows, cols, data };
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|message| Error::FeatureFormat {
            path: path.to_owned(),
            message,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// One product instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub language: Language,
    pub summary: String,
    pub structured_info: StructuredInfo,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
    /// Path of the binary feature sidecar, relative to the corpus file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_features: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        language: Language,
        summary: impl Into<String>,
        structured_info: StructuredInfo,
        caption: impl Into<String>,
    ) -> Self {
        Record {
            id: id.into(),
            language,
            summary: summary.into(),
            structured_info,
            caption: caption.into(),
            generated: None,
            visual_features: None,
            extra: Map::new(),
        }
    }

    pub fn with_generated(mut self, generated: impl Into<String>) -> Self {
        self.generated = Some(generated.into());
        self
    }

    pub fn load_features(&self, corpus_dir: &Path) -> Result<Option<FeatureMatrix>> {
        self.visual_features
            .as_ref()
            .map(|rel| FeatureMatrix::load(&corpus_dir.join(rel)))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks the per-record invariants. An empty list means the record is valid.
pub fn validate_record(r: &Record) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, rule: &str| {
        out.push(Violation {
            field,
            rule: rule.to_owned(),
        })
    };
    if r.id.trim().is_empty() {
        push("id", "must be non-empty");
    }
    if r.summary.trim().is_empty() {
        push("summary", "must be non-empty");
    }
    if r.caption.trim().is_empty() {
        push("caption", "must be non-empty");
    }
    let si = &r.structured_info;
    if si.entries.is_empty() {
        push("structured_info", "must have at least one entry");
    }
    if si.entries.iter().any(|e| e.key.trim().is_empty()) {
        push("structured_info", "keys must be non-empty");
    }
    if si.entries.iter().any(|e| e.value.trim().is_empty()) {
        push("structured_info", "values must be non-empty");
    }
    if let Some(p) = &si.priority {
        if !is_permutation(p, si.entries.len()) {
            push(
                "structured_info",
                "priority must be a permutation of the entry indices",
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub language: Language,
}

impl Corpus {
    pub fn new(records: Vec<Record>, language: Language) -> Self {
        Corpus { records, language }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub dropped: Vec<DroppedLine>,
}

/// Reads a line-delimited corpus. Blank lines are skipped.
///
/// In strict mode the first malformed line, invalid record, duplicate id or
/// language mismatch is an error naming the line. Otherwise such lines are
/// dropped and reported in [`LoadedCorpus::dropped`].
pub fn read_corpus<R: BufRead>(reader: R, strict: bool) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    let mut ids = HashSet::new();
    let mut language = None;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let err = match parse_line(&line, lineno, &ids, language) {
            Ok(rec) => {
                language.get_or_insert(rec.language);
                ids.insert(rec.id.clone());
                out.corpus.records.push(rec);
                continue;
            }
            Err(e) => e,
        };
        if strict {
            return Err(err);
        }
        out.dropped.push(DroppedLine {
            line: lineno,
            reason: err.to_string(),
        });
    }
    out.corpus.language = language.unwrap_or_default();
    Ok(out)
}

fn parse_line(
    line: &str,
    lineno: usize,
    ids: &HashSet<String>,
    language: Option<Language>,
) -> Result<Record> {
    let rec: Record = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: lineno,
        message: e.to_string(),
    })?;
    let violations = validate_record(&rec);
    if !violations.is_empty() {
        let joined = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::InvalidRecord {
            line: lineno,
            violations: joined,
        });
    }
    if ids.contains(&rec.id) {
        return Err(Error::DuplicateId {
            line: lineno,
            id: rec.id,
        });
    }
    if let Some(lang) = language {
        if rec.language != lang {
            return Err(Error::MalformedLine {
                line: lineno,
                message: format!(
                    "language `{}` differs from corpus language `{lang}`",
                    rec.language
                ),
            });
        }
    }
    Ok(rec)
}

pub fn load_corpus(path: &Path, strict: bool) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), strict)
}

/// One compact JSON object per line, known fields first.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> std::io::Result<()> {
    for r in &corpus.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Canonical form of one record line: keys sorted, compact, top-level nulls
/// removed. Two lines describe the same record iff their canonical forms match.
pub fn canonicalize_line(line: &str) -> std::result::Result<String, serde_json::Error> {
    let mut v: Value = serde_json::from_str(line)?;
    if let Value::Object(map) = &mut v {
        map.retain(|_, v| !v.is_null());
    }
    // serde_json's default map is ordered by key
    serde_json::to_string(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> Record {
        Record::new(
            id,
            Language::En,
            "light running shoes",
            StructuredInfo::from_pairs(&[("brand", "Adidas"), ("color", "white")]),
            "Adidas shoes in white",
        )
    }

    #[test]
    fn valid_record_has_no_violations() {
        assert!(validate_record(&record("a")).is_empty());
    }

    #[test]
    fn empty_structured_info_is_one_violation() {
        let mut r = record("a");
        r.structured_info.entries.clear();
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "structured_info");
    }

    #[test]
    fn non_permutation_priority_is_one_violation() {
        let mut r = record("a");
        r.structured_info
            .entries
            .push(Entry::new("material", "mesh"));
        r.structured_info.priority = Some(vec![0, 0, 1]);
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("permutation"));
    }

    #[test]
    fn empty_fields_are_reported() {
        let mut r = record("");
        r.caption = " ".into();
        r.summary.clear();
        let fields: Vec<_> = validate_record(&r).iter().map(|v| v.field).collect();
        assert_eq!(fields, ["id", "summary", "caption"]);
    }

    fn lines(records: &[Record]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn loads_well_formed_lines() {
        let text = lines(&[record("a"), record("b"), record("c")]);
        let loaded = read_corpus(text.as_bytes(), true).unwrap();
        assert_eq!(loaded.corpus.len(), 3);
        assert!(loaded.dropped.is_empty());
    }

    #[test]
    fn lenient_drops_and_strict_rejects() {
        let mut bad = record("b");
        bad.caption.clear();
        let text = lines(&[record("a"), bad, record("c")]);

        let loaded = read_corpus(text.as_bytes(), false).unwrap();
        let ids: Vec<_> = loaded
            .corpus
            .records
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(loaded.dropped.len(), 1);
        assert_eq!(loaded.dropped[0].line, 2);

        let err = read_corpus(text.as_bytes(), true).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_garbage() {
        let text = lines(&[record("a"), record("a")]) + "{not json\n";
        let err = read_corpus(text.as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 2, .. }));
        let loaded = read_corpus(text.as_bytes(), false).unwrap();
        assert_eq!(loaded.corpus.len(), 1);
        assert_eq!(loaded.dropped.len(), 2);
    }

    #[test]
    fn unknown_fields_are_preserved() {
        let line = r#"{"id":"x","language":"zh","summary":"s","structured_info":{"entries":[{"key":"品牌","value":"耐克"}]},"caption":"c","shop":{"rating":4.5},"category":"shoes"}"#;
        let loaded = read_corpus(line.as_bytes(), true).unwrap();
        let r = &loaded.corpus.records[0];
        assert_eq!(r.extra["category"], "shoes");
        assert_eq!(loaded.corpus.language, Language::Zh);
        let mut out = Vec::new();
        write_corpus(&loaded.corpus, &mut out).unwrap();
        let written = String::from_utf8(out).unwrap();
        assert_eq!(
            canonicalize_line(written.trim_end()).unwrap(),
            canonicalize_line(line).unwrap()
        );
    }

    #[test]
    fn mixed_languages_rejected_in_strict_mode() {
        let mut zh = record("b");
        zh.language = Language::Zh;
        let text = lines(&[record("a"), zh]);
        assert!(read_corpus(text.as_bytes(), true).is_err());
        assert_eq!(read_corpus(text.as_bytes(), false).unwrap().corpus.len(), 1);
    }

    #[test]
    fn feature_sidecar_layout() {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 6 * 4);
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(FeatureMatrix::read_from(&bytes[..]).unwrap(), m);
        assert!(FeatureMatrix::read_from(&bytes[..20]).is_err());
        assert!(FeatureMatrix::new(0, 3, vec![]).is_err());
        assert!(FeatureMatrix::new(1, 1, vec![f32::NAN]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(FeatureMatrix::read_from(&trailing[..]).is_err());
    }

    #[test]
    fn feature_sidecar_documented_example() {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let expected: [u8; 32] = [
            0x02, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, //
            0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, //
            0x00, 0x00, 0x80, 0x40, 0x00, 0x00, 0xa0, 0x40, 0x00, 0x00, 0xc0, 0x40,
        ];
        assert_eq!(bytes, expected);
    }
}
