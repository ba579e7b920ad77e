//! Phoneme segmentation with orthography profiles.
//!
//! An unsegmented phoneme string is NFD-normalized and scanned left to
//! right into units. A new unit starts at each base codepoint; stress marks
//! bind to the unit that follows them, combining marks and modifier letters
//! bind to the unit before them, and explicit multi-codepoint units from
//! the profile win over single-codepoint scanning. Double diacritics such
//! as the tie bar U+0361 additionally pull the next base codepoint into the
//! current unit, so affricates like `t͡s` stay whole.
//!
//! Segmented words are joined into sentences with the `▁` (U+2581) word
//! boundary marker between adjacent word or punctuation groups.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::g2p::{phonemize_sentence, G2PRuleSet, PronDict, WordKind, WordPhonemes};
use crate::unicode::{is_combining_mark, is_modifier_letter};

/// The word-boundary metasymbol U+2581.
pub const WORD_BOUNDARY: &str = "\u{2581}";

/// Double diacritics (U+035C..=U+0362) span two base characters; the
/// scanner binds the following base into the current unit when it sees one.
fn is_spanning_mark(c: char) -> bool {
    ('\u{035c}'..='\u{0362}').contains(&c)
}

/// Per-language segmentation rules.
///
/// `attach_next` codepoints merge into the unit that starts at the next
/// base codepoint (default: the IPA stress marks). `attach_prev` codepoints
/// merge into the unit under construction; on top of the explicit set, all
/// combining marks (Mn/Mc/Me) and modifier letters (Lm) attach backwards
/// unless listed in `attach_next`. `multi_units` are explicit units matched
/// longest-first before single-codepoint scanning.
#[derive(Debug, Clone)]
pub struct OrthographyProfile {
    pub lang: String,
    attach_next: BTreeSet<char>,
    attach_prev: BTreeSet<char>,
    multi_units: Vec<String>,
}

impl Default for OrthographyProfile {
    fn default() -> Self {
        OrthographyProfile {
            lang: String::new(),
            // primary and secondary stress
            attach_next: ['\u{02c8}', '\u{02cc}'].into_iter().collect(),
            attach_prev: BTreeSet::new(),
            multi_units: Vec::new(),
        }
    }
}

enum CharClass {
    Next,
    Prev,
    Base,
}

impl OrthographyProfile {
    pub fn new(lang: impl Into<String>) -> Self {
        OrthographyProfile {
            lang: lang.into(),
            ..Default::default()
        }
    }

    pub fn add_attach_next(&mut self, c: char) -> Result<()> {
        if self.attach_prev.contains(&c) {
            return Err(Error::Config(format!(
                "profile: U+{:04X} in both attach_next and attach_prev",
                c as u32
            )));
        }
        self.attach_next.insert(c);
        Ok(())
    }

    pub fn add_attach_prev(&mut self, c: char) -> Result<()> {
        if self.attach_next.contains(&c) {
            return Err(Error::Config(format!(
                "profile: U+{:04X} in both attach_next and attach_prev",
                c as u32
            )));
        }
        self.attach_prev.insert(c);
        Ok(())
    }

    /// Add an explicit multi-codepoint unit (stored NFD).
    pub fn add_multi_unit(&mut self, unit: &str) -> Result<()> {
        let unit: String = unit.nfd().collect();
        if unit.chars().count() < 2 {
            return Err(Error::Config(format!(
                "profile: multi unit '{unit}' must have at least 2 codepoints"
            )));
        }
        self.multi_units.push(unit);
        Ok(())
    }

    fn classify(&self, c: char) -> CharClass {
        if self.attach_next.contains(&c) {
            CharClass::Next
        } else if self.attach_prev.contains(&c) || is_combining_mark(c) || is_modifier_letter(c) {
            CharClass::Prev
        } else {
            CharClass::Base
        }
    }

    /// Longest multi-unit matching a prefix of `rest`, earliest rule on ties.
    fn match_multi(&self, rest: &str) -> Option<&str> {
        let mut best: Option<&str> = None;
        for unit in &self.multi_units {
            if rest.starts_with(unit.as_str()) && best.map_or(true, |b| unit.len() > b.len()) {
                best = Some(unit);
            }
        }
        best
    }

    /// Load a profile from a sectioned TSV-style file: section headers
    /// `[attach_next]`, `[attach_prev]`, `[multi_units]`, one codepoint or
    /// unit per line. Entries extend the defaults.
    pub fn from_file(lang: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut profile = OrthographyProfile::new(lang);
        let fname = path.display().to_string();
        let mut section = String::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                continue;
            }
            let err_here = |msg: String| Error::parse(&fname, i + 1, msg);
            match section.as_str() {
                "attach_next" | "attach_prev" => {
                    let mut chars = line.chars();
                    let c = chars
                        .next()
                        .ok_or_else(|| err_here("expected a codepoint".into()))?;
                    if chars.next().is_some() {
                        return Err(err_here(format!("expected a single codepoint, got '{line}'")));
                    }
                    if section == "attach_next" {
                        profile.add_attach_next(c)?;
                    } else {
                        profile.add_attach_prev(c)?;
                    }
                }
                "multi_units" => profile.add_multi_unit(line)?,
                _ => {
                    return Err(err_here(format!(
                        "line outside a known section (got '{section}')"
                    )))
                }
            }
        }
        Ok(profile)
    }
}

/// Split one word's phoneme string into units.
///
/// The concatenation of the returned units equals the NFD form of the
/// input, codepoint for codepoint.
pub fn segment_word(phonemes: &str, profile: &OrthographyProfile) -> Result<Vec<String>> {
    if phonemes.is_empty() || phonemes.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput(
            "segment_word: input must be non-empty with no whitespace".into(),
        ));
    }
    let nfd: String = phonemes.nfd().collect();
    let mut units: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    let mut pending = String::new(); // buffered attach_next marks
    let mut span_next_base = false; // a double diacritic wants the next base

    let mut rest = nfd.as_str();
    while !rest.is_empty() {
        if let Some(multi) = profile.match_multi(rest) {
            let len = multi.len();
            if span_next_base {
                current.as_mut().expect("span implies open unit").push_str(multi);
                span_next_base = false;
            } else {
                if let Some(u) = current.take() {
                    units.push(u);
                }
                pending.push_str(multi);
                current = Some(std::mem::take(&mut pending));
            }
            rest = &rest[len..];
            continue;
        }
        let c = rest.chars().next().expect("non-empty");
        rest = &rest[c.len_utf8()..];
        if span_next_base {
            current.as_mut().expect("span implies open unit").push(c);
            span_next_base = matches!(profile.classify(c), CharClass::Next);
            continue;
        }
        match profile.classify(c) {
            CharClass::Next => pending.push(c),
            CharClass::Prev => match current.as_mut() {
                Some(u) => {
                    u.push(c);
                    if is_spanning_mark(c) {
                        span_next_base = true;
                    }
                }
                None => {
                    return Err(Error::Segmentation(format!(
                        "dangling combining mark U+{:04X} at start of '{phonemes}'",
                        c as u32
                    )))
                }
            },
            CharClass::Base => {
                if let Some(u) = current.take() {
                    units.push(u);
                }
                pending.push(c);
                current = Some(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        return Err(Error::Segmentation(format!(
            "dangling stress mark at end of '{phonemes}'"
        )));
    }
    if let Some(u) = current {
        units.push(u);
    }
    Ok(units)
}

/// A sentence as phoneme units, `▁` boundary markers, and punctuation
/// units. Displays as units joined by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhonemeSentence {
    units: Vec<String>,
}

impl PhonemeSentence {
    /// Build from units, checking the boundary grammar: no whitespace
    /// inside a unit, no leading/trailing/double `▁`.
    pub fn from_units(units: Vec<String>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if u.is_empty() || u.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "unit {i} must be non-empty with no whitespace"
                )));
            }
            if u == WORD_BOUNDARY {
                let bad = i == 0
                    || i == units.len() - 1
                    || units[i - 1] == WORD_BOUNDARY;
                if bad {
                    return Err(Error::InvalidInput(
                        "boundary marker must sit between two non-marker units".into(),
                    ));
                }
            }
        }
        Ok(PhonemeSentence { units })
    }

    /// Parse one corpus line (units separated by spaces).
    pub fn parse_line(line: &str) -> Result<Self> {
        Self::from_units(line.split_whitespace().map(|s| s.to_string()).collect())
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

impl fmt::Display for PhonemeSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.units.join(" "))
    }
}

/// Assemble segmented words into a sentence, inserting exactly one `▁`
/// between adjacent word/punctuation groups. Punctuation stays one unit.
pub fn join_sentence(
    words: &[WordPhonemes],
    profile: &OrthographyProfile,
) -> Result<PhonemeSentence> {
    let mut units = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            units.push(WORD_BOUNDARY.to_string());
        }
        match w.kind {
            WordKind::Punct => units.push(w.phonemes.nfd().collect()),
            WordKind::Word | WordKind::Oov => units.extend(segment_word(&w.phonemes, profile)?),
        }
    }
    Ok(PhonemeSentence { units })
}

/// Word-level sentence straight to segmented phoneme sentence: exactly
/// `join_sentence(phonemize_sentence(..))`.
pub fn text2phonemesequence(
    sentence: &Sentence,
    dict: &PronDict,
    rules: &G2PRuleSet,
    profile: &OrthographyProfile,
) -> Result<PhonemeSentence> {
    join_sentence(&phonemize_sentence(sentence, dict, rules), profile)
}

/// Read a phoneme corpus: plain text, one sentence per line.
pub fn read_phoneme_corpus(path: &Path) -> Result<Vec<PhonemeSentence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s = PhonemeSentence::parse_line(&line).map_err(|e| {
            Error::parse(path.display().to_string(), i + 1, e.to_string())
        })?;
        out.push(s);
    }
    Ok(out)
}

/// Write a phoneme corpus: one sentence per line, single-space separated.
pub fn write_phoneme_corpus(path: &Path, sentences: &[PhonemeSentence]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: &str) -> Vec<String> {
        segment_word(s, &OrthographyProfile::default()).unwrap()
    }

    #[test]
    fn paper_worked_example() {
        assert_eq!(seg("ˈmɑdəɫ"), ["ˈm", "ɑ", "d", "ə", "ɫ"]);
    }

    #[test]
    fn stress_attaches_forward() {
        assert_eq!(seg("ˈeɪ"), ["ˈe", "ɪ"]);
        assert_eq!(seg("ˌməɫtiˈɫɪŋwəɫ"), [
            "ˌm", "ə", "ɫ", "t", "i", "ˈɫ", "ɪ", "ŋ", "w", "ə", "ɫ"
        ]);
    }

    #[test]
    fn modifier_letters_attach_backward() {
        assert_eq!(seg("tʰa"), ["tʰ", "a"]);
        assert_eq!(seg("aː"), ["aː"]);
    }

    #[test]
    fn single_codepoint() {
        assert_eq!(seg("a"), ["a"]);
    }

    #[test]
    fn tie_bar_spans_two_bases() {
        assert_eq!(seg("t͡sa"), ["t͡s", "a"]);
        assert_eq!(seg("at͡ʃ"), ["a", "t͡ʃ"]);
    }

    #[test]
    fn combining_marks_stay_with_their_base() {
        // é decomposes to e + U+0301 under NFD
        let units = seg("péa");
        assert_eq!(units, ["p", "e\u{301}", "a"]);
        let nfd: String = "péa".nfd().collect();
        assert_eq!(units.concat(), nfd);
    }

    #[test]
    fn dangling_marks_error() {
        let p = OrthographyProfile::default();
        let err = segment_word("ːa", &p).unwrap_err();
        assert!(err.to_string().contains("dangling combining mark"));
        let err = segment_word("aˈ", &p).unwrap_err();
        assert!(err.to_string().contains("dangling stress mark"));
    }

    #[test]
    fn multi_units_win_over_scanning() {
        let mut p = OrthographyProfile::default();
        p.add_multi_unit("aɪ").unwrap();
        assert_eq!(segment_word("haɪ", &p).unwrap(), ["h", "aɪ"]);
    }

    #[test]
    fn longest_multi_unit_wins() {
        let mut p = OrthographyProfile::default();
        p.add_multi_unit("ab").unwrap();
        p.add_multi_unit("abc").unwrap();
        assert_eq!(segment_word("abcd", &p).unwrap(), ["abc", "d"]);
    }

    #[test]
    fn stress_binds_to_multi_unit() {
        let mut p = OrthographyProfile::default();
        p.add_multi_unit("aɪ").unwrap();
        assert_eq!(segment_word("ˈaɪ", &p).unwrap(), ["ˈaɪ"]);
    }

    #[test]
    fn lossless_on_fixtures() {
        for word in ["ˈmɑdəɫ", "tʰa", "t͡sa", "ˈeɪ", "péa", "ˌməɫtiˈɫɪŋwəɫ"] {
            let units = seg(word);
            let nfd: String = word.nfd().collect();
            assert_eq!(units.concat(), nfd, "lossless for {word}");
        }
    }

    fn wp(phonemes: &str, kind: WordKind) -> WordPhonemes {
        WordPhonemes {
            surface: String::new(),
            phonemes: phonemes.to_string(),
            kind,
        }
    }

    #[test]
    fn join_figure_example() {
        let words = [
            wp("ˈeɪ", WordKind::Word),
            wp("ˌməɫtiˈɫɪŋwəɫ", WordKind::Word),
            wp("ˈmɑdəɫ", WordKind::Word),
        ];
        let s = join_sentence(&words, &OrthographyProfile::default()).unwrap();
        assert_eq!(
            s.to_string(),
            "ˈe ɪ ▁ ˌm ə ɫ t i ˈɫ ɪ ŋ w ə ɫ ▁ ˈm ɑ d ə ɫ"
        );
    }

    #[test]
    fn join_empty() {
        let s = join_sentence(&[], &OrthographyProfile::default()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.to_string(), "");
    }

    #[test]
    fn join_with_punctuation_group() {
        let words = [wp("haɪ", WordKind::Oov), wp(",", WordKind::Punct)];
        let s = join_sentence(&words, &OrthographyProfile::default()).unwrap();
        assert_eq!(s.to_string(), "h a ɪ ▁ ,");
    }

    #[test]
    fn boundary_grammar_enforced() {
        assert!(PhonemeSentence::from_units(vec!["▁".into(), "a".into()]).is_err());
        assert!(PhonemeSentence::from_units(vec!["a".into(), "▁".into()]).is_err());
        assert!(
            PhonemeSentence::from_units(vec!["a".into(), "▁".into(), "▁".into(), "b".into()])
                .is_err()
        );
        assert!(PhonemeSentence::from_units(vec!["a".into(), "▁".into(), "b".into()]).is_ok());
    }

    #[test]
    fn parse_line_round_trip() {
        let s = PhonemeSentence::parse_line("ˈm ɑ ▁ ,").unwrap();
        assert_eq!(s.to_string(), "ˈm ɑ ▁ ,");
        assert_eq!(s.len(), 4);
    }
}
