//! Grapheme-to-phoneme conversion.
//!
//! Words are looked up in a pronunciation dictionary first; anything the
//! dictionary misses goes through an ordered longest-match rewrite rule set
//! and is flagged out-of-vocabulary. Punctuation tokens pass through
//! untouched.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::unicode::is_punctuation_token;

/// A pronunciation dictionary: lowercase NFC word -> unsegmented phoneme
/// string. One pronunciation per word; on duplicate entries the first wins.
#[derive(Debug, Clone, Default)]
pub struct PronDict {
    pub lang: String,
    entries: HashMap<String, String>,
}

impl PronDict {
    pub fn new(lang: impl Into<String>) -> Self {
        PronDict {
            lang: lang.into(),
            entries: HashMap::new(),
        }
    }

    /// Insert an entry. Returns false (and keeps the old value) if the word
    /// was already present.
    pub fn insert(&mut self, word: impl Into<String>, phonemes: impl Into<String>) -> bool {
        let word = word.into();
        if self.entries.contains_key(&word) {
            return false;
        }
        self.entries.insert(word, phonemes.into());
        true
    }

    /// Load from TSV: `word<TAB>phonemes`, UTF-8, `#`-prefixed comment lines
    /// ignored. Words are NFC-normalized and lowercased.
    pub fn from_tsv(lang: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut dict = PronDict::new(lang);
        let fname = path.display().to_string();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, phonemes) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&fname, i + 1, "expected word<TAB>phonemes"))?;
            let word: String = word.nfc().collect::<String>().to_lowercase();
            let phonemes = phonemes.trim();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::parse(&fname, i + 1, "word must be non-empty, no whitespace"));
            }
            if phonemes.is_empty() || phonemes.chars().any(char::is_whitespace) {
                return Err(Error::parse(
                    &fname,
                    i + 1,
                    "phoneme string must be non-empty, no whitespace",
                ));
            }
            if !dict.insert(word.clone(), phonemes) {
                log::warn!("{fname}:{}: duplicate entry for '{word}', first wins", i + 1);
            }
        }
        Ok(dict)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact-match lookup. The word must already be lowercase NFC.
    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.entries.get(word).map(|s| s.as_str())
    }
}

/// Ordered grapheme -> phoneme rewrite rules applied longest-match-first,
/// ties broken by list order. The deterministic fallback for words the
/// dictionary does not cover.
#[derive(Debug, Clone, Default)]
pub struct G2PRuleSet {
    pub lang: String,
    rules: Vec<(String, String)>,
}

impl G2PRuleSet {
    pub fn new(lang: impl Into<String>) -> Self {
        G2PRuleSet {
            lang: lang.into(),
            rules: Vec::new(),
        }
    }

    pub fn push(&mut self, grapheme: impl Into<String>, phonemes: impl Into<String>) -> Result<()> {
        let grapheme = grapheme.into();
        if grapheme.is_empty() {
            return Err(Error::InvalidInput("rule left-hand side must be non-empty".into()));
        }
        self.rules.push((grapheme, phonemes.into()));
        Ok(())
    }

    /// Load from TSV: `grapheme<TAB>phonemes`, order significant.
    pub fn from_tsv(lang: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut rules = G2PRuleSet::new(lang);
        let fname = path.display().to_string();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&fname, i + 1, "expected grapheme<TAB>phonemes"))?;
            if lhs.is_empty() {
                return Err(Error::parse(&fname, i + 1, "rule left-hand side must be non-empty"));
            }
            rules.rules.push((lhs.to_string(), rhs.to_string()));
        }
        Ok(rules)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The rule matching the longest prefix of `rest`; ties go to the
    /// earliest rule.
    fn best_match(&self, rest: &str) -> Option<&(String, String)> {
        let mut best: Option<&(String, String)> = None;
        for rule in &self.rules {
            if rest.starts_with(rule.0.as_str()) {
                let better = match best {
                    Some(b) => rule.0.len() > b.0.len(),
                    None => true,
                };
                if better {
                    best = Some(rule);
                }
            }
        }
        best
    }
}

/// Deterministic left-to-right longest-match rewrite. Characters no rule
/// matches pass through unchanged.
pub fn fallback_g2p(word: &str, rules: &G2PRuleSet) -> Result<String> {
    if word.is_empty() {
        return Err(Error::InvalidInput("fallback_g2p: empty word".into()));
    }
    let mut out = String::with_capacity(word.len());
    let mut rest = word;
    while !rest.is_empty() {
        match rules.best_match(rest) {
            Some((lhs, rhs)) => {
                out.push_str(rhs);
                rest = &rest[lhs.len()..];
            }
            None => {
                let c = rest.chars().next().expect("non-empty");
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordKind {
    /// Pronunciation came from the dictionary.
    Word,
    /// Pure punctuation, passed through verbatim.
    Punct,
    /// Not in the dictionary; pronounced by the rule fallback.
    Oov,
}

/// One token with its unsegmented phoneme string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPhonemes {
    pub surface: String,
    pub phonemes: String,
    pub kind: WordKind,
}

/// Convert a sentence token-by-token: punctuation passes through, the
/// dictionary is consulted before the rule fallback. Never drops or
/// reorders tokens.
pub fn phonemize_sentence(
    sentence: &Sentence,
    dict: &PronDict,
    rules: &G2PRuleSet,
) -> Vec<WordPhonemes> {
    sentence
        .words
        .iter()
        .map(|token| phonemize_token(token, dict, rules))
        .collect()
}

fn phonemize_token(token: &str, dict: &PronDict, rules: &G2PRuleSet) -> WordPhonemes {
    if is_punctuation_token(token) {
        return WordPhonemes {
            surface: token.to_string(),
            phonemes: token.to_string(),
            kind: WordKind::Punct,
        };
    }
    if let Some(phonemes) = dict.lookup(token) {
        return WordPhonemes {
            surface: token.to_string(),
            phonemes: phonemes.to_string(),
            kind: WordKind::Word,
        };
    }
    // Tokens are non-empty by construction, so the fallback cannot fail.
    let phonemes = fallback_g2p(token, rules).unwrap_or_else(|_| token.to_string());
    WordPhonemes {
        surface: token.to_string(),
        phonemes,
        kind: WordKind::Oov,
    }
}
