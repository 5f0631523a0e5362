//! Score ingestion: MusicXML parsing, MIDI pitch mapping, pinyin
//! splitting, and beat-to-frame conversion.

mod musicxml;
mod pinyin;

pub use musicxml::parse_musicxml;
pub use pinyin::{normalize_syllable, split_pinyin};

use std::collections::HashMap;

use num_rational::Ratio;
use num_traits::ToPrimitive;

use crate::error::{Error, Result};
use crate::vocab::{PhonemeType, Slur};

/// Exact beat count, kept rational until frame quantization.
pub type Beats = Ratio<i64>;

/// Frames per second at the 10 ms frame unit.
pub const FRAMES_PER_SECOND: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NotePitch {
    /// MIDI note number, 0-127. Meaningless when `rest` is set.
    pub midi: u8,
    pub rest: bool,
}

impl NotePitch {
    pub fn rest() -> Self {
        NotePitch { midi: 0, rest: true }
    }

    pub fn from_midi(midi: u8) -> Result<Self> {
        if midi > 127 {
            return Err(Error::Range(format!("midi {midi} outside [0,127]")));
        }
        Ok(NotePitch { midi, rest: false })
    }

    /// Pitch embedding id: midi for notes, 128 for rests.
    pub fn id(&self) -> u16 {
        if self.rest {
            crate::vocab::PITCH_REST_ID
        } else {
            self.midi as u16
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Note {
    pub pitch: NotePitch,
    pub beats: Beats,
    pub slur: Slur,
    pub tied_from_prev: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyllableEvent {
    /// Romanized syllable, empty for silence events.
    pub pinyin: String,
    pub notes: Vec<Note>,
}

impl SyllableEvent {
    pub fn is_silence(&self) -> bool {
        self.notes.iter().all(|n| n.pitch.rest)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Score {
    pub bpm: f64,
    pub events: Vec<SyllableEvent>,
    pub singer_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhonemeUnit {
    pub phoneme: String,
    pub ptype: PhonemeType,
}

/// Map (step, alter, octave) to a MIDI note number per the MIDI standard:
/// midi = 12*(octave+1) + semitone(step) + alter, semitone(C)=0..semitone(B)=11.
pub fn midi_from_spn(step: char, alter: i32, octave: i32) -> Result<NotePitch> {
    let semitone = match step.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        other => {
            return Err(Error::parse(format!("invalid step letter '{other}'")));
        }
    };
    if !(-1..=9).contains(&octave) {
        return Err(Error::Range(format!("octave {octave} outside [-1,9]")));
    }
    let midi = 12 * (octave + 1) + semitone + alter;
    if !(0..=127).contains(&midi) {
        return Err(Error::Range(format!(
            "midi {midi} outside [0,127] for {step}{octave} alter {alter}"
        )));
    }
    NotePitch::from_midi(midi as u8)
}

/// Convert a beat count to 10 ms frames, rounding half away from zero.
pub fn beats_to_frames(beats: Beats, bpm: f64) -> Result<u32> {
    if beats <= Ratio::from_integer(0) {
        return Err(Error::validation(format!("non-positive beat count {beats}")));
    }
    if !(bpm > 0.0) {
        return Err(Error::validation(format!("non-positive bpm {bpm}")));
    }
    let seconds = beats.to_f64().unwrap() * 60.0 / bpm;
    Ok(round_half_away(seconds * FRAMES_PER_SECOND) as u32)
}

/// Half-away-from-zero rounding, the frame quantization used everywhere.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Quantize a span in seconds to whole frames.
pub fn seconds_to_frames(seconds: f64) -> u32 {
    round_half_away(seconds * FRAMES_PER_SECOND).max(0) as u32
}

/// Optional hanzi -> pinyin lookup, loaded from UTF-8 lines "hanzi<TAB>pinyin".
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, String>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (hanzi, pinyin) = line.split_once('\t').ok_or_else(|| {
                Error::parse(format!("lexicon line {}: expected hanzi<TAB>pinyin", i + 1))
            })?;
            entries.insert(hanzi.trim().to_string(), pinyin.trim().to_string());
        }
        Ok(Lexicon { entries })
    }

    pub fn lookup(&self, hanzi: &str) -> Option<&str> {
        self.entries.get(hanzi).map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Resolve an event's lyric text to romanized pinyin, consulting the
/// lexicon for non-ASCII lyrics.
pub fn resolve_pinyin(lyric: &str, lexicon: Option<&Lexicon>) -> Result<String> {
    if lyric.is_ascii() {
        return Ok(lyric.to_ascii_lowercase());
    }
    match lexicon.and_then(|l| l.lookup(lyric)) {
        Some(p) => Ok(p.to_ascii_lowercase()),
        None => Err(Error::Unknown {
            kind: "lyric (no lexicon entry)".into(),
            value: lyric.to_string(),
        }),
    }
}
