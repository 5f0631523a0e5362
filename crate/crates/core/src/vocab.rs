//! Fixed, versioned phoneme and symbol tables.
//!
//! Ids are stable across runs and releases of the same table version; an
//! unknown phoneme is an error, never an OOV bucket.

use crate::error::{Error, Result};

pub const TABLE_VERSION: u32 = 1;

/// The 21 Mandarin initials, ordered for longest-prefix matching
/// (two-letter initials first).
pub const INITIALS: [&str; 21] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s",
];

/// Finals that may follow an initial.
pub const FINALS: [&str; 36] = [
    "a", "o", "e", "i", "u", "v", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er",
    "ia", "ie", "iao", "iu", "ian", "in", "iang", "ing", "iong", "ua", "uo", "uai", "ui", "uan",
    "un", "uang", "ueng", "ue", "ve", "vn",
];

/// Whole-syllable spellings with no initial: standalone finals plus the
/// y-/w- written forms.
pub const SINGLE_FINALS: [&str; 36] = [
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "er", "yi", "ya", "yo", "ye",
    "yao", "you", "yan", "yin", "yang", "ying", "yong", "yu", "yue", "yuan", "yun", "wu", "wa",
    "wo", "wai", "wei", "wan", "wen", "wang", "weng",
];

pub const SILENCE: &str = "sil";

/// Pitch id space: midi 0..=127, with 128 reserved for rests.
pub const PITCH_REST_ID: u16 = 128;
pub const PITCH_VOCAB: usize = 129;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhonemeType {
    Initial,
    Final,
    SingleFinal,
    Silence,
}

impl PhonemeType {
    pub fn id(self) -> u8 {
        match self {
            PhonemeType::Initial => 0,
            PhonemeType::Final => 1,
            PhonemeType::SingleFinal => 2,
            PhonemeType::Silence => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => PhonemeType::Initial,
            1 => PhonemeType::Final,
            2 => PhonemeType::SingleFinal,
            3 => PhonemeType::Silence,
            _ => {
                return Err(Error::Unknown {
                    kind: "phoneme type id".into(),
                    value: id.to_string(),
                })
            }
        })
    }
}

pub const PTYPE_VOCAB: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slur {
    Null,
    Start,
    Continue,
    Stop,
}

impl Slur {
    pub fn id(self) -> u8 {
        match self {
            Slur::Null => 0,
            Slur::Start => 1,
            Slur::Continue => 2,
            Slur::Stop => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => Slur::Null,
            1 => Slur::Start,
            2 => Slur::Continue,
            3 => Slur::Stop,
            _ => {
                return Err(Error::Unknown {
                    kind: "slur id".into(),
                    value: id.to_string(),
                })
            }
        })
    }
}

pub const SLUR_VOCAB: usize = 4;

/// Ordered phoneme table: sil, initials, then the union of finals and
/// single-final spellings (sorted, deduplicated).
pub fn phoneme_table() -> Vec<&'static str> {
    let mut table = vec![SILENCE];
    table.extend_from_slice(&INITIALS);
    let mut rest: Vec<&str> = FINALS
        .iter()
        .chain(SINGLE_FINALS.iter())
        .copied()
        .collect();
    rest.sort_unstable();
    rest.dedup();
    table.extend(rest);
    table
}

pub fn phoneme_vocab_size() -> usize {
    phoneme_table().len()
}

pub fn phoneme_id(phoneme: &str) -> Result<u16> {
    phoneme_table()
        .iter()
        .position(|p| *p == phoneme)
        .map(|i| i as u16)
        .ok_or_else(|| Error::Unknown {
            kind: "phoneme".into(),
            value: phoneme.to_string(),
        })
}

pub fn phoneme_from_id(id: u16) -> Result<&'static str> {
    phoneme_table()
        .get(id as usize)
        .copied()
        .ok_or_else(|| Error::Unknown {
            kind: "phoneme id".into(),
            value: id.to_string(),
        })
}
