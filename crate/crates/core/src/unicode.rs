//! Character classes shared by tokenization and phoneme segmentation.

use unicode_properties::{GeneralCategory, UnicodeGeneralCategory};

/// Punctuation for token detachment and passthrough: categories
/// Po, Ps, Pe, Pd, Pi, Pf. Connector punctuation (Pc, e.g. `_`) is
/// deliberately not included.
pub fn is_punctuation(c: char) -> bool {
    matches!(
        c.general_category(),
        GeneralCategory::OtherPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
    )
}

/// True if every char of a non-empty token is punctuation.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation)
}

/// Combining marks (Mn, Mc, Me).
pub fn is_combining_mark(c: char) -> bool {
    matches!(
        c.general_category(),
        GeneralCategory::NonspacingMark
            | GeneralCategory::SpacingMark
            | GeneralCategory::EnclosingMark
    )
}

/// Modifier letters (Lm), e.g. aspiration `ʰ` or the length mark `ː`.
pub fn is_modifier_letter(c: char) -> bool {
    c.general_category() == GeneralCategory::ModifierLetter
}
