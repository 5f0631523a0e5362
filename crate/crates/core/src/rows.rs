//! Phoneme-level row assembly: align score phonemes with annotated
//! intervals and build the per-phoneme input rows (Ph, Pt, Pi, Sr, Bt)
//! with nominal and ground-truth durations.

use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::score::{
    beats_to_frames, normalize_syllable, resolve_pinyin, seconds_to_frames, split_pinyin, Lexicon,
    NotePitch, Score,
};
use crate::vocab::{self, PhonemeType, Slur, SILENCE};

/// Silence intervals shorter than this are treated as annotation jitter
/// and dropped before alignment.
pub const SILENCE_MERGE_THRESHOLD_SEC: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEntry {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl IntervalEntry {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhonemeRow {
    pub ph: u16,
    pub pt: PhonemeType,
    pub pi: NotePitch,
    pub sr: Slur,
    /// Note-beat duration in frames.
    pub bt: u32,
    pub nominal_dur: u32,
    pub gt_dur: Option<u32>,
    pub syllable_index: u32,
}

impl PhonemeRow {
    pub fn phoneme(&self) -> &'static str {
        vocab::phoneme_from_id(self.ph).unwrap_or("?")
    }

    pub fn is_silence(&self) -> bool {
        self.pt == PhonemeType::Silence
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub singer_id: Option<String>,
    pub rows: Vec<PhonemeRow>,
    /// Source span in seconds, when cut from a longer recording.
    pub span: Option<(f64, f64)>,
}

/// Parse an interval TSV ("start_sec<TAB>end_sec<TAB>label"), validating
/// order and synthesizing silence entries for gaps.
pub fn parse_intervals(text: &str) -> Result<Vec<IntervalEntry>> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (start, end, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(e), Some(l)) => (s, e, l),
            _ => {
                return Err(Error::validation(format!(
                    "expected 3 tab-separated fields at line {lineno}"
                )))
            }
        };
        let start: f64 = start
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad start time at line {lineno}")))?;
        let end: f64 = end
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad end time at line {lineno}")))?;
        if start < 0.0 {
            return Err(Error::validation(format!(
                "negative start time at line {lineno}"
            )));
        }
        if end <= start {
            return Err(Error::validation(format!(
                "negative duration at line {lineno}"
            )));
        }
        raw.push((lineno, IntervalEntry {
            start,
            end,
            label: label.trim().to_string(),
        }));
    }
    let mut out: Vec<IntervalEntry> = Vec::with_capacity(raw.len());
    let mut prev_end = 0.0f64;
    let mut prev_line = 0usize;
    for (lineno, entry) in raw {
        if entry.start < prev_end - 1e-9 {
            return Err(Error::validation(format!(
                "interval at line {lineno} overlaps the one at line {prev_line}"
            )));
        }
        if entry.start > prev_end + 1e-9 {
            out.push(IntervalEntry {
                start: prev_end,
                end: entry.start,
                label: SILENCE.to_string(),
            });
        }
        prev_end = entry.end;
        prev_line = lineno;
        out.push(entry);
    }
    Ok(out)
}

/// Expand a parsed, phonemized score into phoneme rows with nominal
/// durations. The syllable's note duration is split evenly between
/// initial and final; melisma repeats the final once per extra note.
pub fn build_rows(score: &Score, lexicon: Option<&Lexicon>) -> Result<Vec<PhonemeRow>> {
    let mut rows = Vec::new();
    for (syllable_index, event) in score.events.iter().enumerate() {
        let syllable_index = syllable_index as u32;
        let note_frames: Vec<u32> = event
            .notes
            .iter()
            .map(|n| beats_to_frames(n.beats, score.bpm))
            .collect::<Result<_>>()?;

        if event.is_silence() {
            rows.push(PhonemeRow {
                ph: vocab::phoneme_id(SILENCE)?,
                pt: PhonemeType::Silence,
                pi: NotePitch::rest(),
                sr: Slur::Null,
                bt: note_frames.iter().sum(),
                nominal_dur: note_frames.iter().sum(),
                gt_dur: None,
                syllable_index,
            });
            continue;
        }

        let resolved = resolve_pinyin(&event.pinyin, lexicon)?;
        let (syllable, _stripped) = normalize_syllable(&resolved);
        let units = split_pinyin(&syllable)?;
        let multi = event.notes.len() > 1;

        let first_d = note_frames[0];
        let first_pitch = event.notes[0].pitch;
        let first_sr = |is_final: bool| -> Slur {
            if multi && is_final {
                Slur::Start
            } else {
                Slur::Null
            }
        };

        match units.as_slice() {
            [single] => {
                rows.push(PhonemeRow {
                    ph: vocab::phoneme_id(&single.phoneme)?,
                    pt: single.ptype,
                    pi: first_pitch,
                    sr: first_sr(true),
                    bt: first_d,
                    nominal_dur: first_d,
                    gt_dur: None,
                    syllable_index,
                });
            }
            [initial, final_] => {
                let init_dur = ((first_d as f64) / 2.0).round() as u32;
                rows.push(PhonemeRow {
                    ph: vocab::phoneme_id(&initial.phoneme)?,
                    pt: initial.ptype,
                    pi: first_pitch,
                    sr: Slur::Null,
                    bt: first_d,
                    nominal_dur: init_dur,
                    gt_dur: None,
                    syllable_index,
                });
                rows.push(PhonemeRow {
                    ph: vocab::phoneme_id(&final_.phoneme)?,
                    pt: final_.ptype,
                    pi: first_pitch,
                    sr: first_sr(true),
                    bt: first_d,
                    nominal_dur: first_d - init_dur,
                    gt_dur: None,
                    syllable_index,
                });
            }
            _ => unreachable!("split_pinyin yields 1 or 2 units"),
        }

        // Melisma sustains the vowel: repeat the final once per extra note.
        let final_unit = units.last().unwrap();
        let last = event.notes.len() - 1;
        for (k, note) in event.notes.iter().enumerate().skip(1) {
            rows.push(PhonemeRow {
                ph: vocab::phoneme_id(&final_unit.phoneme)?,
                pt: final_unit.ptype,
                pi: note.pitch,
                sr: if k == last { Slur::Stop } else { Slur::Continue },
                bt: note_frames[k],
                nominal_dur: note_frames[k],
                gt_dur: None,
                syllable_index,
            });
        }
    }
    Ok(rows)
}

/// Attach ground-truth durations from annotated intervals. Labels must
/// match row phonemes one-to-one after dropping sub-threshold silences.
pub fn attach_ground_truth(rows: &mut [PhonemeRow], intervals: &[IntervalEntry]) -> Result<()> {
    attach_ground_truth_with_threshold(rows, intervals, SILENCE_MERGE_THRESHOLD_SEC)
}

pub fn attach_ground_truth_with_threshold(
    rows: &mut [PhonemeRow],
    intervals: &[IntervalEntry],
    min_silence_sec: f64,
) -> Result<()> {
    let kept: Vec<&IntervalEntry> = intervals
        .iter()
        .filter(|e| e.label != SILENCE || e.duration() >= min_silence_sec)
        .collect();
    if kept.len() != rows.len() {
        return Err(Error::Alignment(format!(
            "interval count {} does not match row count {}",
            kept.len(),
            rows.len()
        )));
    }
    for (i, (row, interval)) in rows.iter().zip(kept.iter()).enumerate() {
        if row.phoneme() != interval.label {
            return Err(Error::Alignment(format!(
                "label mismatch at index {i}: row '{}' vs interval '{}'",
                row.phoneme(),
                interval.label
            )));
        }
    }
    for (row, interval) in rows.iter_mut().zip(kept.iter()) {
        let start = seconds_to_frames(interval.start);
        let end = seconds_to_frames(interval.end);
        row.gt_dur = Some(end.saturating_sub(start).max(1));
    }
    Ok(())
}

/// Contiguous row index ranges, one per syllable.
pub fn syllable_ranges(rows: &[PhonemeRow]) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0usize;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].syllable_index != rows[start].syllable_index {
            ranges.push(start..i);
            start = i;
        }
    }
    ranges
}

// ---------------------------------------------------------------------------
// Serialization: columnar binary (magic "WSROWS1") and a debugging TSV.
// ---------------------------------------------------------------------------

pub const ROWS_MAGIC: &[u8; 7] = b"WSROWS1";
const ROWS_VERSION: u16 = 1;

pub fn write_rows_binary<W: Write>(utt: &Utterance, w: &mut W) -> Result<()> {
    w.write_all(ROWS_MAGIC)?;
    w.write_all(&ROWS_VERSION.to_le_bytes())?;
    write_str(w, &utt.utterance_id)?;
    write_str(w, utt.singer_id.as_deref().unwrap_or(""))?;
    w.write_all(&(utt.rows.len() as u32).to_le_bytes())?;
    for r in &utt.rows {
        w.write_all(&r.ph.to_le_bytes())?;
    }
    for r in &utt.rows {
        w.write_all(&[r.pt.id()])?;
    }
    for r in &utt.rows {
        w.write_all(&r.pi.id().to_le_bytes())?;
    }
    for r in &utt.rows {
        w.write_all(&[r.sr.id()])?;
    }
    for r in &utt.rows {
        w.write_all(&r.bt.to_le_bytes())?;
    }
    for r in &utt.rows {
        w.write_all(&r.nominal_dur.to_le_bytes())?;
    }
    for r in &utt.rows {
        let gt: i64 = r.gt_dur.map(|g| g as i64).unwrap_or(-1);
        w.write_all(&gt.to_le_bytes())?;
    }
    for r in &utt.rows {
        w.write_all(&r.syllable_index.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_rows_binary<R: Read>(r: &mut R) -> Result<Utterance> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != ROWS_MAGIC {
        return Err(Error::Format("not a WSROWS1 file".into()));
    }
    let version = read_u16(r)?;
    if version != ROWS_VERSION {
        return Err(Error::Format(format!("unsupported WSROWS1 version {version}")));
    }
    let utterance_id = read_str(r)?;
    let singer = read_str(r)?;
    let n = read_u32(r)? as usize;
    let ph: Vec<u16> = (0..n).map(|_| read_u16(r)).collect::<Result<_>>()?;
    let pt: Vec<u8> = (0..n).map(|_| read_u8(r)).collect::<Result<_>>()?;
    let pi: Vec<u16> = (0..n).map(|_| read_u16(r)).collect::<Result<_>>()?;
    let sr: Vec<u8> = (0..n).map(|_| read_u8(r)).collect::<Result<_>>()?;
    let bt: Vec<u32> = (0..n).map(|_| read_u32(r)).collect::<Result<_>>()?;
    let nominal: Vec<u32> = (0..n).map(|_| read_u32(r)).collect::<Result<_>>()?;
    let gt: Vec<i64> = (0..n).map(|_| read_i64(r)).collect::<Result<_>>()?;
    let syl: Vec<u32> = (0..n).map(|_| read_u32(r)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        vocab::phoneme_from_id(ph[i])?;
        rows.push(PhonemeRow {
            ph: ph[i],
            pt: PhonemeType::from_id(pt[i])?,
            pi: if pi[i] == vocab::PITCH_REST_ID {
                NotePitch::rest()
            } else {
                NotePitch::from_midi(pi[i] as u8)?
            },
            sr: Slur::from_id(sr[i])?,
            bt: bt[i],
            nominal_dur: nominal[i],
            gt_dur: if gt[i] < 0 { None } else { Some(gt[i] as u32) },
            syllable_index: syl[i],
        });
    }
    Ok(Utterance {
        utterance_id,
        singer_id: if singer.is_empty() { None } else { Some(singer) },
        rows,
        span: None,
    })
}

pub fn write_rows_tsv<W: Write>(utt: &Utterance, w: &mut W) -> Result<()> {
    writeln!(
        w,
        "# WSROWS1\tutterance={}\tsinger={}",
        utt.utterance_id,
        utt.singer_id.as_deref().unwrap_or("-")
    )?;
    writeln!(w, "# phoneme\tptype\tpitch\tslur\tbt\tnominal\tgt\tsyllable")?;
    for r in &utt.rows {
        let pitch = if r.pi.rest {
            "rest".to_string()
        } else {
            r.pi.midi.to_string()
        };
        let gt = r.gt_dur.map(|g| g.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            w,
            "{}\t{:?}\t{}\t{:?}\t{}\t{}\t{}\t{}",
            r.phoneme(),
            r.pt,
            pitch,
            r.sr,
            r.bt,
            r.nominal_dur,
            gt,
            r.syllable_index
        )?;
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i64<R: Read>(r: &mut R) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}
