//! Whitespace phoneme tokenizer: vocabulary construction, id encoding and
//! decoding.
//!
//! Ids 0-4 are reserved for `<s>`, `<pad>`, `</s>`, `<unk>`, `<mask>`.
//! Regular tokens are ordered by descending corpus frequency, ties by
//! codepoint order, starting at id 5 — so a vocabulary is a pure function
//! of the unit multiset, independent of corpus order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::segment::PhonemeSentence;

pub const BOS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const SPECIALS: [&str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];

/// First id available to regular tokens.
pub const FIRST_REGULAR_ID: u32 = SPECIALS.len() as u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Count units across the corpus and build the vocabulary. Every unit
    /// (boundary markers and punctuation included) seen at least
    /// `min_count` times receives an id.
    pub fn build<'a, I>(corpus: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PhonemeSentence>,
    {
        if min_count < 1 {
            return Err(Error::Config("build_vocab: min_count must be >= 1".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for unit in sentence.units() {
                *freq.entry(unit.as_str()).or_insert(0) += 1;
            }
        }
        let mut regular: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        regular.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut counts: Vec<u64> = vec![0; SPECIALS.len()];
        for (token, count) in regular {
            tokens.push(token.to_string());
            counts.push(count);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids, counts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_REGULAR_ID
    }

    /// `[BOS] + unit ids (UNK for unknowns) + [EOS]`.
    pub fn encode(&self, sentence: &PhonemeSentence) -> Vec<u32> {
        self.encode_units(sentence.units().iter().map(|u| u.as_str()))
    }

    pub fn encode_units<'a, I>(&self, units: I) -> Vec<u32>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut ids = vec![BOS_ID];
        for unit in units {
            ids.push(self.id(unit).unwrap_or(UNK_ID));
        }
        ids.push(EOS_ID);
        ids
    }

    /// Space-joined tokens with specials omitted. Errors on any id outside
    /// the vocabulary.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self
                .token(id)
                .ok_or_else(|| Error::Vocab(format!("id {id} out of range (vocab size {})", self.len())))?;
            if Self::is_special(id) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(token);
        }
        Ok(out)
    }

    /// Serialized form: one `token<TAB>count` per line, line number = id.
    fn render(&self) -> String {
        let mut out = String::new();
        for (token, count) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{token}\t{count}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let fname = path.display().to_string();
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&fname, i + 1, "expected token<TAB>count"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(&fname, i + 1, format!("bad count '{count}'")))?;
            tokens.push(token.to_string());
            counts.push(count);
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Vocab(format!(
                "{fname}: first {} lines must be the special tokens {:?}",
                SPECIALS.len(),
                SPECIALS
            )));
        }
        Ok(Self::from_parts(tokens, counts))
    }

    /// SHA-256 of the serialized vocabulary, recorded in checkpoints so a
    /// mismatched vocab/checkpoint pair is caught at load time.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}
