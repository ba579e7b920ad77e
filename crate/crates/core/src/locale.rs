//! Locale registry.
//!
//! Language/locale codes are ISO-639-3-style, optionally with a locale
//! suffix (`eng-us`, `vie-n`). The built-in registry covers the 94 locales
//! of the pretraining corpus plus the parent codes of languages whose
//! locales share one text source and are populated by locale splitting.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// The 94 built-in locale codes.
const BUILTIN_LOCALES: &[&str] = &[
    "ady", "afr", "amh", "ara", "arg", "arm-e", "arm-w", "aze", "bak", "bel", "ben", "bos", "bul",
    "bur", "cat", "cze", "dan", "dut", "egy", "eng-uk", "eng-us", "epo", "est", "eus", "fas",
    "fin", "fra", "fra-qu", "geo", "ger", "gla", "gle", "glg", "grc", "gre", "grn", "guj",
    "hbs-cyrl", "hbs-latn", "hin", "hun", "ice", "ido", "ina", "ind", "ita", "jam", "jpn", "kaz",
    "khm", "kor", "kur", "lat-clas", "lat-eccl", "lit", "ltz", "mac", "min", "mlt", "ori", "pap",
    "pol", "por-bz", "por-po", "ron", "rus", "san", "slo", "slv", "sme", "snd", "spa",
    "spa-latin", "spa-me", "sqi", "srp", "swa", "swe", "tam", "tat", "tgl", "tha", "tts", "tuk",
    "tur", "ukr", "vie-c", "vie-n", "vie-s", "wel-nw", "wel-sw", "yue", "zho-s", "zho-t",
];

/// Parent codes for languages whose locales are produced by splitting a
/// single shared text source.
const PARENT_CODES: &[&str] = &["eng", "hbs", "lat", "por", "vie", "wel"];

#[derive(Debug, Clone)]
pub struct LocaleRegistry {
    codes: BTreeSet<String>,
}

impl Default for LocaleRegistry {
    fn default() -> Self {
        let codes = BUILTIN_LOCALES
            .iter()
            .chain(PARENT_CODES.iter())
            .map(|s| s.to_string())
            .collect();
        LocaleRegistry { codes }
    }
}

impl LocaleRegistry {
    /// An empty registry (no codes accepted until inserted).
    pub fn empty() -> Self {
        LocaleRegistry {
            codes: BTreeSet::new(),
        }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }

    pub fn insert(&mut self, code: impl Into<String>) {
        self.codes.insert(code.into());
    }

    /// Validate a code, returning it on success.
    pub fn check<'a>(&self, code: &'a str) -> Result<&'a str> {
        if self.contains(code) {
            Ok(code)
        } else {
            Err(Error::UnknownLocale(code.to_string()))
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(|s| s.as_str())
    }
}
