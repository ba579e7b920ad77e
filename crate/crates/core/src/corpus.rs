//! Corpus ingestion: sentence/word segmentation, deduplication, locale
//! splitting, and per-locale statistics.
//!
//! Input documents arrive as JSON lines `{"id", "lang", "text"}`; retained
//! sentences are written back out as JSON lines `{"doc_id", "lang",
//! "words"}`. All text is NFC-normalized and lowercased on the way in so
//! downstream stages (dedup keys, dictionary lookup) see one canonical form.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::locale::LocaleRegistry;
use crate::rng::{fnv1a, stream_rng, STREAM_SPLIT};
use crate::unicode::{is_punctuation, is_punctuation_token};

/// A raw input document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub lang: String,
    pub text: String,
}

/// One segmented, lowercased sentence.
///
/// `words` holds word and punctuation tokens in order; the surface string
/// is always `words` joined by single spaces (see [`Sentence::raw`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub lang: String,
    pub words: Vec<String>,
}

impl Sentence {
    /// The surface string: tokens joined by single spaces.
    pub fn raw(&self) -> String {
        self.words.join(" ")
    }

    /// Count of tokens that are not pure punctuation.
    pub fn non_punct_count(&self) -> usize {
        self.words
            .iter()
            .filter(|w| !is_punctuation_token(w))
            .count()
    }
}

/// Sentence-terminal punctuation. A sentence closes at one of these when
/// followed by whitespace or end of text.
const TERMINALS: [char; 7] = ['.', '!', '?', '…', '。', '！', '？'];

/// Split a document into lowercased sentences.
///
/// Boundaries fall after terminal punctuation followed by whitespace (or at
/// end of text). Each sentence is whitespace-tokenized with leading and
/// trailing punctuation detached into their own tokens. Sentences with no
/// tokens are never emitted.
pub fn split_sentences(doc: &RawDocument, registry: &LocaleRegistry) -> Result<Vec<Sentence>> {
    registry.check(&doc.lang)?;
    let text: String = doc.text.nfc().collect::<String>().to_lowercase();

    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if TERMINALS.contains(&c) {
            let at_boundary = match chars.peek() {
                Some(next) => next.is_whitespace(),
                None => true,
            };
            if at_boundary {
                push_sentence(&mut sentences, doc, &current);
                current.clear();
            }
        }
    }
    push_sentence(&mut sentences, doc, &current);
    Ok(sentences)
}

fn push_sentence(out: &mut Vec<Sentence>, doc: &RawDocument, chunk: &str) {
    let words = tokenize(chunk);
    if !words.is_empty() {
        out.push(Sentence {
            doc_id: doc.id.clone(),
            lang: doc.lang.clone(),
            words,
        });
    }
}

/// Whitespace tokenization with leading/trailing punctuation detached.
fn tokenize(chunk: &str) -> Vec<String> {
    let mut words = Vec::new();
    for token in chunk.split_whitespace() {
        let chars: Vec<char> = token.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && is_punctuation(chars[start]) {
            start += 1;
        }
        while end > start && is_punctuation(chars[end - 1]) {
            end -= 1;
        }
        for &c in &chars[..start] {
            words.push(c.to_string());
        }
        if start < end {
            words.push(chars[start..end].iter().collect());
        }
        for &c in &chars[end..] {
            words.push(c.to_string());
        }
    }
    words
}

/// Drop duplicate sentences (exact raw string, per locale) and sentences
/// with fewer than two non-punctuation tokens. First occurrence wins;
/// relative order is preserved. Keys are held in one in-memory set per
/// locale, so memory grows with the number of distinct retained sentences.
pub fn dedup_filter<I>(sentences: I) -> impl Iterator<Item = Sentence>
where
    I: IntoIterator<Item = Sentence>,
{
    let mut seen: HashMap<String, HashSet<String>> = HashMap::new();
    sentences.into_iter().filter(move |s| {
        if s.non_punct_count() < 2 {
            return false;
        }
        seen.entry(s.lang.clone())
            .or_default()
            .insert(s.raw())
    })
}

/// Randomly divide sentences into `locales.len()` near-equal parts.
///
/// Sizes differ by at most one, with the remainder going to the earliest
/// locales in list order. The partition is a deterministic function of the
/// inputs, the locale list, and the seed; within each part the original
/// input order is preserved. Sentences are not relabeled here — callers
/// that want part `i` to carry `locales[i]` do that when writing out.
pub fn split_locales(
    sentences: Vec<Sentence>,
    locales: &[String],
    seed: u64,
) -> Result<Vec<Vec<Sentence>>> {
    let k = locales.len();
    if k == 0 {
        return Err(Error::Config("split_locales: empty locale list".into()));
    }
    let n = sentences.len();
    let mut key = seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15);
    for loc in locales {
        key ^= fnv1a(loc.as_bytes());
    }
    let mut rng = stream_rng(key, STREAM_SPLIT, n as u64, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let base = n / k;
    let rem = n % k;
    let mut slots: Vec<Option<Sentence>> = sentences.into_iter().map(Some).collect();
    let mut parts = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let size = base + usize::from(i < rem);
        let mut idx: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        idx.sort_unstable();
        parts.push(
            idx.into_iter()
                .map(|j| slots[j].take().expect("index used twice"))
                .collect(),
        );
    }
    Ok(parts)
}

/// Per-locale sentence counts. Stored exact; thousands are a display unit
/// only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorpusStats {
    pub counts: BTreeMap<String, u64>,
}

impl CorpusStats {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

pub fn corpus_stats<'a, I>(sentences: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut stats = CorpusStats::default();
    for s in sentences {
        *stats.counts.entry(s.lang.clone()).or_insert(0) += 1;
    }
    stats
}

/// Read documents from a JSON-lines file: one `{"id","lang","text"}` per line.
pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        if doc.id.is_empty() {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                "document id must be non-empty",
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Write sentences as JSON lines `{"doc_id","lang","words"}`.
pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in sentences {
        serde_json::to_writer(&mut w, s).map_err(|e| {
            Error::parse(path.display().to_string(), 0, e.to_string())
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut sentences = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentence = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        sentences.push(s);
    }
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> RawDocument {
        RawDocument {
            id: "d1".into(),
            lang: "eng-us".into(),
            text: text.into(),
        }
    }

    fn words(s: &Sentence) -> Vec<&str> {
        s.words.iter().map(|w| w.as_str()).collect()
    }

    #[test]
    fn splits_at_terminal_punctuation() {
        let out = split_sentences(&doc("Hello world. Bye!"), &LocaleRegistry::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(words(&out[0]), ["hello", "world", "."]);
        assert_eq!(words(&out[1]), ["bye", "!"]);
    }

    #[test]
    fn empty_input_gives_no_sentences() {
        let out = split_sentences(&doc(""), &LocaleRegistry::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn end_of_text_closes_a_sentence() {
        let out = split_sentences(&doc("No terminal punct"), &LocaleRegistry::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(words(&out[0]), ["no", "terminal", "punct"]);
    }

    #[test]
    fn terminal_inside_token_does_not_split() {
        // "3.5" has no whitespace after the dot
        let out = split_sentences(&doc("pi is 3.5 about"), &LocaleRegistry::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn detaches_leading_and_trailing_punctuation() {
        let out = split_sentences(&doc("(Hello), world."), &LocaleRegistry::default()).unwrap();
        assert_eq!(words(&out[0]), ["(", "hello", ")", ",", "world", "."]);
    }

    #[test]
    fn unknown_lang_is_an_error() {
        let mut d = doc("Hi there.");
        d.lang = "nope".into();
        let err = split_sentences(&d, &LocaleRegistry::default()).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn lowercases_and_nfc_normalizes() {
        // U+0041 U+030A (A + ring) NFC-composes to Å, then lowercases to å
        let out = split_sentences(&doc("A\u{030a}NGSTRO\u{0308}M units."), &LocaleRegistry::default())
            .unwrap();
        assert_eq!(words(&out[0])[0], "ångström");
    }

    fn sent(lang: &str, raw: &str) -> Sentence {
        Sentence {
            doc_id: "d".into(),
            lang: lang.into(),
            words: raw.split_whitespace().map(|w| w.to_string()).collect(),
        }
    }

    #[test]
    fn dedup_drops_duplicates_and_single_words() {
        let input = vec![
            sent("eng-us", "hello world"),
            sent("eng-us", "hello world"),
            sent("eng-us", "hi"),
        ];
        let out: Vec<_> = dedup_filter(input).collect();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].raw(), "hello world");
    }

    #[test]
    fn dedup_is_per_locale() {
        let input = vec![sent("eng-us", "a b ."), sent("eng-uk", "a b .")];
        let out: Vec<_> = dedup_filter(input).collect();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn dedup_counts_non_punctuation_tokens() {
        // one word plus a period is still "single-word"
        let input = vec![sent("eng-us", "hi ."), sent("eng-us", "hi there .")];
        let out: Vec<_> = dedup_filter(input).collect();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].raw(), "hi there .");
    }

    #[test]
    fn dedup_empty_is_empty() {
        let out: Vec<_> = dedup_filter(Vec::new()).collect();
        assert!(out.is_empty());
    }

    #[test]
    fn split_locales_sizes_and_permutation() {
        let sentences: Vec<_> = (0..7)
            .map(|i| sent("eng", &format!("word{i} tail")))
            .collect();
        let locales: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let parts = split_locales(sentences.clone(), &locales, 7).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes, [3, 2, 2]);

        let mut all: Vec<String> = parts.iter().flatten().map(|s| s.raw()).collect();
        let mut orig: Vec<String> = sentences.iter().map(|s| s.raw()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_locales_even_split() {
        let sentences: Vec<_> = (0..10).map(|i| sent("eng", &format!("w{i} x"))).collect();
        let locales: Vec<String> = vec!["eng-uk".into(), "eng-us".into()];
        let parts = split_locales(sentences, &locales, 1).unwrap();
        assert_eq!(parts[0].len(), 5);
        assert_eq!(parts[1].len(), 5);
    }

    #[test]
    fn split_locales_single_locale_is_identity() {
        let sentences: Vec<_> = (0..4).map(|i| sent("eng", &format!("w{i} x"))).collect();
        let parts = split_locales(sentences.clone(), &["eng-us".to_string()], 99).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], sentences);
    }

    #[test]
    fn split_locales_deterministic() {
        let sentences: Vec<_> = (0..20).map(|i| sent("eng", &format!("w{i} x"))).collect();
        let locales: Vec<String> = vec!["a".into(), "b".into()];
        let p1 = split_locales(sentences.clone(), &locales, 3).unwrap();
        let p2 = split_locales(sentences, &locales, 3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn split_locales_zero_is_error() {
        assert!(split_locales(vec![], &[], 0).is_err());
    }

    #[test]
    fn stats_counts_per_locale() {
        let sentences = vec![
            sent("eng-us", "a b"),
            sent("eng-us", "c d"),
            sent("eng-us", "e f"),
            sent("vie-n", "g h"),
            sent("vie-n", "i j"),
        ];
        let stats = corpus_stats(&sentences);
        assert_eq!(stats.counts["eng-us"], 3);
        assert_eq!(stats.counts["vie-n"], 2);
        assert_eq!(stats.total(), 5);
        // keys serialize sorted
        let json = serde_json::to_string(&stats).unwrap();
        assert_eq!(json, r#"{"eng-us":3,"vie-n":2}"#);
    }

    #[test]
    fn stats_empty() {
        let stats = corpus_stats([]);
        assert!(stats.counts.is_empty());
        assert_eq!(stats.total(), 0);
    }
}
