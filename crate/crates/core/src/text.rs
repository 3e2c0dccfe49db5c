//! Tokenization, n-gram extraction and longest-common-subsequence primitives.
//!
//! English text is case-folded and split on whitespace and Unicode
//! punctuation. Chinese text yields one token per CJK character, while runs
//! of letters or digits (brand names, sizes, model numbers) stay whole.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum Language {
    #[default]
    En,
    Zh,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::En => f.write_str("en"),
            Language::Zh => f.write_str("zh"),
        }
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "zh" | "zh-cn" => Ok(Language::Zh),
            other => Err(format!("unknown language `{other}` (expected en or zh)")),
        }
    }
}

/// Normalized token list for one caption or summary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub language: Language,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, language: Language) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        TokenSequence { tokens, language }
    }

    pub fn from_words(words: &[&str], language: Language) -> Self {
        Self::new(words.iter().map(|w| (*w).to_owned()).collect(), language)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined text. Re-tokenizing it gives back the same tokens.
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // ext B onward
}

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Full-width forms of the ASCII punctuation block, plus CJK symbols.
fn is_fullwidth_punctuation(c: char) -> bool {
    matches!(c as u32,
        0xFF01..=0xFF0F | 0xFF1A..=0xFF20 | 0xFF3B..=0xFF40 | 0xFF5B..=0xFF65
        | 0x3000..=0x303F)
}

fn is_mark(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::NonspacingMark
            | GeneralCategory::SpacingMark
            | GeneralCategory::EnclosingMark
    )
}

fn is_separator(c: char, language: Language) -> bool {
    if c.is_whitespace() || is_unicode_punctuation(c) {
        return true;
    }
    match language {
        Language::En => false,
        Language::Zh => c.is_ascii_punctuation() || is_fullwidth_punctuation(c),
    }
}

fn fold_case(out: &mut String, c: char) {
    if c.is_uppercase() {
        out.extend(c.to_lowercase());
    } else {
        out.push(c);
    }
}

fn flush(buf: &mut String, out: &mut Vec<String>) {
    if !buf.is_empty() {
        out.push(std::mem::take(buf));
    }
}

fn tokenize_into(text: &str, language: Language, out: &mut Vec<String>) {
    let mut buf = String::new();
    for c in text.chars() {
        if is_separator(c, language) {
            flush(&mut buf, out);
            continue;
        }
        match language {
            Language::En => fold_case(&mut buf, c),
            Language::Zh => {
                if is_cjk(c) {
                    flush(&mut buf, out);
                    out.push(c.to_string());
                } else if c.is_alphanumeric() || is_mark(c) {
                    fold_case(&mut buf, c);
                } else {
                    // emoji, currency signs and other symbols stand alone
                    flush(&mut buf, out);
                    let mut s = String::new();
                    fold_case(&mut s, c);
                    out.push(s);
                }
            }
        }
    }
    flush(&mut buf, out);
}

/// Tokenizes raw text. Deterministic; empty input yields an empty sequence.
pub fn tokenize(text: &str, language: Language) -> TokenSequence {
    let mut tokens = Vec::new();
    tokenize_into(text, language, &mut tokens);
    TokenSequence::new(tokens, language)
}

/// Like [`tokenize`], but keeps `⟨key⟩` placeholder tokens intact so that
/// conceptualized text written to disk can be read back.
pub fn tokenize_with_placeholders(text: &str, language: Language) -> TokenSequence {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while let Some(open) = rest.find(crate::ontology::PLACEHOLDER_OPEN) {
            let after = &rest[open..];
            let Some(close) = after.find(crate::ontology::PLACEHOLDER_CLOSE) else {
                break;
            };
            tokenize_into(&rest[..open], language, &mut tokens);
            let end = close + crate::ontology::PLACEHOLDER_CLOSE.len_utf8();
            tokens.push(after[..end].to_owned());
            rest = &after[end..];
        }
        tokenize_into(rest, language, &mut tokens);
    }
    TokenSequence::new(tokens, language)
}

/// Multiset of contiguous n-token windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramMultiset<'a> {
    pub n: usize,
    pub counts: HashMap<&'a [String], usize>,
}

impl<'a> NgramMultiset<'a> {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// All contiguous windows of length `n` (`n >= 1`).
pub fn ngrams(tokens: &[String], n: usize) -> NgramMultiset<'_> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    NgramMultiset { n, counts }
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_length<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Position of the first contiguous occurrence of `phrase` in `tokens`.
pub fn find_phrase(tokens: &[String], phrase: &[String]) -> Option<usize> {
    find_phrase_from(tokens, phrase, 0)
}

pub(crate) fn find_phrase_from(tokens: &[String], phrase: &[String], from: usize) -> Option<usize> {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return None;
    }
    (from..=tokens.len() - phrase.len()).find(|&i| tokens[i..i + phrase.len()] == *phrase)
}

pub fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    find_phrase(tokens, phrase).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn english_tokenization() {
        assert_eq!(
            tokenize("Adidas Shoes, white!", Language::En).tokens,
            toks(&["adidas", "shoes", "white"])
        );
        assert!(tokenize("", Language::En).is_empty());
        assert!(tokenize("  ,.!  ", Language::En).is_empty());
        assert_eq!(
            tokenize("it's 100% cotton—really", Language::En).tokens,
            toks(&["it", "s", "100", "cotton", "really"])
        );
    }

    #[test]
    fn chinese_tokenization() {
        assert_eq!(
            tokenize("红色T恤", Language::Zh).tokens,
            toks(&["红", "色", "t", "恤"])
        );
        assert_eq!(
            tokenize("阿迪达斯Adidas，XL码。", Language::Zh).tokens,
            toks(&["阿", "迪", "达", "斯", "adidas", "xl", "码"])
        );
        assert_eq!(
            tokenize("iPhone13手机!（新款）", Language::Zh).tokens,
            toks(&["iphone13", "手", "机", "新", "款"])
        );
    }

    #[test]
    fn placeholders_survive_retokenization() {
        let t = tokenize_with_placeholders("⟨brand⟩ shoes, ⟨color⟩!", Language::En);
        assert_eq!(t.tokens, toks(&["⟨brand⟩", "shoes", "⟨color⟩"]));
        let t = tokenize_with_placeholders("好看的⟨品牌⟩鞋", Language::Zh);
        assert_eq!(t.tokens, toks(&["好", "看", "的", "⟨品牌⟩", "鞋"]));
        // plain tokenization never produces the bracket characters
        assert_eq!(tokenize("⟨brand⟩", Language::En).tokens, toks(&["brand"]));
    }

    #[test]
    fn ngram_windows() {
        let seq = toks(&["a", "b", "a", "b"]);
        let m = ngrams(&seq, 2);
        assert_eq!(m.counts.len(), 2);
        assert_eq!(m.get(&toks(&["a", "b"])), 2);
        assert_eq!(m.get(&toks(&["b", "a"])), 1);
        assert!(ngrams(&toks(&["a"]), 2).is_empty());
        let abc = toks(&["a", "b", "c"]);
        let m = ngrams(&abc, 1);
        assert_eq!(m.counts.len(), 3);
        assert!(m.counts.values().all(|&c| c == 1));
    }

    #[test]
    fn lcs_examples() {
        let x = toks(&["a", "b", "c"]);
        assert_eq!(lcs_length(&x, &x), 3);
        assert_eq!(
            lcs_length(&toks(&["a", "b", "c", "d"]), &toks(&["b", "d"])),
            2
        );
        assert_eq!(lcs_length(&[] as &[String], &x), 0);
    }

    #[test]
    fn phrase_search() {
        let t = toks(&["pure", "cotton", "white", "shirt"]);
        assert_eq!(find_phrase(&t, &toks(&["cotton", "white"])), Some(1));
        assert_eq!(find_phrase(&t, &toks(&["white", "cotton"])), None);
        assert_eq!(find_phrase(&t, &[]), None);
    }

    fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
        // exhaustive over subsequences of the shorter side
        let (a, b) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| a[i])
                .collect();
            let mut it = b.iter();
            if sub.iter().all(|x| it.any(|y| y == x)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    proptest! {
        #[test]
        fn lcs_symmetric_bounded_and_matches_brute(
            a in proptest::collection::vec(0u8..4, 0..9),
            b in proptest::collection::vec(0u8..4, 0..9),
        ) {
            let l = lcs_length(&a, &b);
            prop_assert_eq!(l, lcs_length(&b, &a));
            prop_assert!(l <= a.len().min(b.len()));
            prop_assert_eq!(l, lcs_brute(&a, &b));
        }

        #[test]
        fn ngram_total_is_window_count(
            seq in proptest::collection::vec("[abc]", 0..12),
            n in 1usize..5,
        ) {
            let m = ngrams(&seq, n);
            prop_assert_eq!(m.total(), (seq.len() + 1).saturating_sub(n));
            prop_assert!(m.counts.keys().all(|g| g.len() == n));
        }

        #[test]
        fn tokenize_is_idempotent(text in "\\PC{0,40}", zh in any::<bool>()) {
            let lang = if zh { Language::Zh } else { Language::En };
            let once = tokenize(&text, lang);
            prop_assert!(once.tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
            let twice = tokenize(&once.join(), lang);
            prop_assert_eq!(once, twice);
        }
    }
}
