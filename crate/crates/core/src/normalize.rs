//! Minimal text normalization pre-pass.
//!
//! Full written-to-spoken normalization is out of scope; the built-in rule
//! verbalizes standalone ASCII digit runs in English text ("42" ->
//! "forty two"). Runs too long for a u64 are read digit by digit.

use std::borrow::Cow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextNormalizer {
    /// Pass text through unchanged.
    #[default]
    None,
    /// Replace ASCII digit runs with spelled-out English numbers.
    EnglishDigits,
}

impl TextNormalizer {
    pub fn apply<'a>(&self, text: &'a str) -> Cow<'a, str> {
        match self {
            TextNormalizer::None => Cow::Borrowed(text),
            TextNormalizer::EnglishDigits => verbalize_digits_en(text),
        }
    }
}

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const SCALES: [(u64, &str); 4] = [
    (1_000_000_000_000, "trillion"),
    (1_000_000_000, "billion"),
    (1_000_000, "million"),
    (1_000, "thousand"),
];

fn spell_under_1000(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!(n < 1000);
    let mut n = n;
    if n >= 100 {
        out.push(ONES[(n / 100) as usize]);
        out.push("hundred");
        n %= 100;
        if n == 0 {
            return;
        }
    }
    if n >= 20 {
        out.push(TENS[(n / 10) as usize]);
        n %= 10;
        if n == 0 {
            return;
        }
    }
    out.push(ONES[n as usize]);
}

/// Spell a non-negative integer in English words.
pub fn spell_number_en(n: u64) -> String {
    if n == 0 {
        return "zero".to_string();
    }
    let mut parts = Vec::new();
    let mut n = n;
    for (scale, name) in SCALES {
        if n >= scale {
            spell_under_1000(n / scale, &mut parts);
            parts.push(name);
            n %= scale;
        }
    }
    if n > 0 {
        spell_under_1000(n, &mut parts);
    }
    parts.join(" ")
}

/// Replace every maximal ASCII digit run with its spelled-out form.
pub fn verbalize_digits_en(text: &str) -> Cow<'_, str> {
    if !text.bytes().any(|b| b.is_ascii_digit()) {
        return Cow::Borrowed(text);
    }
    let mut out = String::with_capacity(text.len() + 16);
    let mut run = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            run.push(c);
        } else {
            if !run.is_empty() {
                push_spelled(&mut out, &run);
                run.clear();
            }
            out.push(c);
        }
    }
    if !run.is_empty() {
        push_spelled(&mut out, &run);
    }
    Cow::Owned(out)
}

fn push_spelled(out: &mut String, digits: &str) {
    match digits.parse::<u64>() {
        Ok(n) => out.push_str(&spell_number_en(n)),
        // Longer than u64: read digit by digit.
        Err(_) => {
            for (i, d) in digits.bytes().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(ONES[(d - b'0') as usize]);
            }
        }
    }
}
