//! Initial/final splitting of romanized Mandarin syllables.

use crate::error::{Error, Result};
use crate::score::PhonemeUnit;
use crate::vocab::{PhonemeType, FINALS, INITIALS, SINGLE_FINALS};

/// Strip trailing tone digits (1-5). Returns the cleaned syllable and
/// whether anything was stripped, so callers can warn.
pub fn normalize_syllable(syllable: &str) -> (String, bool) {
    let cleaned = syllable.trim_end_matches(|c: char| c.is_ascii_digit());
    (cleaned.to_string(), cleaned.len() != syllable.len())
}

/// Split a toneless pinyin syllable into [initial, final] by longest-prefix
/// match against the 21-initial table, or a lone [single_final].
pub fn split_pinyin(syllable: &str) -> Result<Vec<PhonemeUnit>> {
    if syllable.is_empty() {
        return Err(Error::validation("empty syllable"));
    }
    if !syllable
        .chars()
        .all(|c| c.is_ascii_lowercase())
    {
        return Err(Error::validation(format!(
            "syllable '{syllable}' is not lowercase toneless pinyin"
        )));
    }
    // INITIALS lists two-letter initials first, so the first prefix hit is
    // the longest one.
    let initial = INITIALS.iter().find(|i| syllable.starts_with(**i));
    match initial {
        Some(initial) => {
            let rest = &syllable[initial.len()..];
            if rest.is_empty() {
                return Err(Error::validation(format!(
                    "syllable '{syllable}': no final after initial '{initial}'"
                )));
            }
            if !FINALS.contains(&rest) {
                return Err(Error::validation(format!(
                    "syllable '{syllable}': unknown final '{rest}' (erhua and nonstandard finals are rejected)"
                )));
            }
            Ok(vec![
                PhonemeUnit {
                    phoneme: initial.to_string(),
                    ptype: PhonemeType::Initial,
                },
                PhonemeUnit {
                    phoneme: rest.to_string(),
                    ptype: PhonemeType::Final,
                },
            ])
        }
        None => {
            if !SINGLE_FINALS.contains(&syllable) {
                return Err(Error::validation(format!(
                    "unknown syllable '{syllable}'"
                )));
            }
            Ok(vec![PhonemeUnit {
                phoneme: syllable.to_string(),
                ptype: PhonemeType::SingleFinal,
            }])
        }
    }
}
