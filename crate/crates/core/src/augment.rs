//! Corpus augmentation: pause-based segmentation of annotated rows into
//! three clip-length classes, and optional score transposition.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Score, FRAMES_PER_SECOND};
use crate::rows::{PhonemeRow, Utterance};

/// Silence rows at least this long are segmentation cut candidates.
pub const PAUSE_THRESHOLD_FRAMES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentClass {
    Short,
    Medium,
    Long,
}

impl SegmentClass {
    pub const ALL: [SegmentClass; 3] =
        [SegmentClass::Short, SegmentClass::Medium, SegmentClass::Long];

    /// (exclusive lower, inclusive upper) bound in seconds.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SegmentClass::Short => (0.0, 5.0),
            SegmentClass::Medium => (5.0, 8.0),
            SegmentClass::Long => (8.0, 12.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            SegmentClass::Short => "0-5",
            SegmentClass::Medium => "5-8",
            SegmentClass::Long => "8-12",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub utterance_id: String,
    pub start_sec: f64,
    pub end_sec: f64,
    #[serde(skip)]
    pub row_range: Range<usize>,
    pub class: SegmentClass,
    /// Set when a single pause-delimited span already exceeded the class
    /// upper bound and was kept anyway.
    pub overlength: bool,
}

fn gt(rows: &[PhonemeRow], i: usize) -> Result<u32> {
    rows[i]
        .gt_dur
        .ok_or_else(|| Error::validation("segmentation needs ground-truth durations"))
}

/// Row-index boundaries: 0, rows.len(), and every silence row of at
/// least the pause threshold (the silence row itself is the boundary).
pub fn detect_cut_points(rows: &[PhonemeRow]) -> Result<Vec<usize>> {
    let mut cuts = vec![0];
    for i in 0..rows.len() {
        if rows[i].is_silence() && gt(rows, i)? >= PAUSE_THRESHOLD_FRAMES {
            cuts.push(i);
        }
    }
    cuts.push(rows.len());
    cuts.dedup();
    Ok(cuts)
}

/// Pause-delimited spans as row ranges, qualifying silences excluded.
fn spans(rows: &[PhonemeRow]) -> Result<Vec<Range<usize>>> {
    let cuts = detect_cut_points(rows)?;
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // skip the boundary silence row itself
        let start = if a < rows.len() && rows[a].is_silence() && gt(rows, a)? >= PAUSE_THRESHOLD_FRAMES
        {
            a + 1
        } else {
            a
        };
        if start < b {
            out.push(start..b);
        }
    }
    Ok(out)
}

fn range_frames(rows: &[PhonemeRow], r: &Range<usize>) -> Result<u32> {
    let mut total = 0;
    for i in r.clone() {
        total += gt(rows, i)?;
    }
    Ok(total)
}

fn row_start_frames(rows: &[PhonemeRow], idx: usize) -> Result<u32> {
    let mut total = 0;
    for i in 0..idx {
        total += gt(rows, i)?;
    }
    Ok(total)
}

/// Greedy left-to-right packing of pause-delimited spans into clips of
/// one length class. A span alone above the upper bound is kept and
/// flagged rather than dropped.
pub fn segment(utt: &Utterance, class: SegmentClass) -> Result<Vec<Clip>> {
    let rows = &utt.rows;
    let (lower, upper) = class.bounds();
    let spans = spans(rows)?;
    let mut clips: Vec<Range<usize>> = Vec::new();
    let mut cur: Option<Range<usize>> = None;
    for span in spans {
        cur = Some(match cur {
            None => span,
            Some(acc) => {
                // merging spans swallows the pause rows between them
                let merged = acc.start..span.end;
                let acc_sec = range_frames(rows, &acc)? as f64 / FRAMES_PER_SECOND;
                let merged_sec = range_frames(rows, &merged)? as f64 / FRAMES_PER_SECOND;
                if merged_sec > upper && acc_sec > lower {
                    clips.push(acc);
                    span
                } else {
                    merged
                }
            }
        });
    }
    if let Some(acc) = cur {
        clips.push(acc);
    }

    let mut out = Vec::with_capacity(clips.len());
    for (k, r) in clips.into_iter().enumerate() {
        let start_f = row_start_frames(rows, r.start)?;
        let len_f = range_frames(rows, &r)?;
        let sec = len_f as f64 / FRAMES_PER_SECOND;
        out.push(Clip {
            clip_id: format!("{}_{}_{k:03}", utt.utterance_id, class.tag()),
            utterance_id: utt.utterance_id.clone(),
            start_sec: start_f as f64 / FRAMES_PER_SECOND,
            end_sec: (start_f + len_f) as f64 / FRAMES_PER_SECOND,
            row_range: r,
            class,
            overlength: sec > upper,
        });
    }
    Ok(out)
}

/// All three segmentations of every utterance, in stable order.
pub fn vs_augment(corpus: &[Utterance]) -> Result<Vec<Clip>> {
    let mut out = Vec::new();
    for class in SegmentClass::ALL {
        for utt in corpus {
            out.extend(segment(utt, class)?);
        }
    }
    Ok(out)
}

/// Extract a clip's rows as a standalone utterance.
pub fn materialize(utt: &Utterance, clip: &Clip) -> Utterance {
    Utterance {
        utterance_id: clip.clip_id.clone(),
        singer_id: utt.singer_id.clone(),
        rows: utt.rows[clip.row_range.clone()].to_vec(),
        span: Some((clip.start_sec, clip.end_sec)),
    }
}

/// Shift every non-rest note by the given semitone count.
pub fn transpose_score(score: &Score, semitones: i32) -> Result<Score> {
    let mut out = score.clone();
    for event in &mut out.events {
        for note in &mut event.notes {
            if note.pitch.rest {
                continue;
            }
            let midi = note.pitch.midi as i32 + semitones;
            if !(0..=127).contains(&midi) {
                return Err(Error::Range(format!(
                    "transposition by {semitones} puts midi {} out of range",
                    note.pitch.midi
                )));
            }
            note.pitch.midi = midi as u8;
        }
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(clips: &[Clip], w: &mut W) -> Result<()> {
    for clip in clips {
        serde_json::to_writer(&mut *w, clip).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<Clip>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let clip: Clip = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        out.push(clip);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::score::{midi_from_spn, Beats, Note, NotePitch, SyllableEvent};
    use crate::vocab::{self, PhonemeType, Slur, SILENCE};

    fn voiced_row(gt: u32, syl: u32) -> PhonemeRow {
        PhonemeRow {
            ph: 25,
            pt: PhonemeType::Final,
            pi: NotePitch { midi: 60, rest: false },
            sr: Slur::Null,
            bt: gt,
            nominal_dur: gt,
            gt_dur: Some(gt),
            syllable_index: syl,
        }
    }

    fn silence_row(gt: u32, syl: u32) -> PhonemeRow {
        PhonemeRow {
            ph: vocab::phoneme_id(SILENCE).unwrap(),
            pt: PhonemeType::Silence,
            pi: NotePitch::rest(),
            sr: Slur::Null,
            bt: gt,
            nominal_dur: gt,
            gt_dur: Some(gt),
            syllable_index: syl,
        }
    }

    fn utt(rows: Vec<PhonemeRow>) -> Utterance {
        Utterance {
            utterance_id: "song".into(),
            singer_id: None,
            rows,
            span: None,
        }
    }

    #[test]
    fn cut_points_follow_the_pause_threshold() {
        // no silences: just the ends
        let rows = vec![voiced_row(50, 0), voiced_row(50, 1)];
        assert_eq!(detect_cut_points(&rows).unwrap(), vec![0, 2]);

        // a 0.5 s pause is a candidate
        let rows = vec![voiced_row(50, 0), silence_row(50, 1), voiced_row(50, 2)];
        assert_eq!(detect_cut_points(&rows).unwrap(), vec![0, 1, 3]);

        // a 5-frame pause is not
        let rows = vec![voiced_row(50, 0), silence_row(5, 1), voiced_row(50, 2)];
        assert_eq!(detect_cut_points(&rows).unwrap(), vec![0, 3]);
    }

    #[test]
    fn greedy_packing_examples() {
        // two 3 s spans, medium class: one clip of about 6 s
        let rows = vec![
            voiced_row(300, 0),
            silence_row(20, 1),
            voiced_row(300, 2),
        ];
        let clips = segment(&utt(rows), SegmentClass::Medium).unwrap();
        assert_eq!(clips.len(), 1);
        let sec = clips[0].end_sec - clips[0].start_sec;
        assert!((5.0..=8.0).contains(&sec), "{sec}");
        assert!(!clips[0].overlength);

        // a single 10 s span in the short class survives with a flag
        let rows = vec![voiced_row(1000, 0)];
        let clips = segment(&utt(rows), SegmentClass::Short).unwrap();
        assert_eq!(clips.len(), 1);
        assert!(clips[0].overlength);

        // 2 s spans in the short class stay separate (2+2 fits, +1 more
        // would not)
        let rows = vec![
            voiced_row(200, 0),
            silence_row(20, 1),
            voiced_row(200, 2),
            silence_row(20, 3),
            voiced_row(200, 4),
        ];
        let clips = segment(&utt(rows), SegmentClass::Short).unwrap();
        assert_eq!(clips.len(), 2);
        assert!(clips.iter().all(|c| !c.overlength));
    }

    #[test]
    fn every_voiced_row_lands_in_exactly_one_clip_per_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut rows = Vec::new();
            let mut syl = 0u32;
            for _ in 0..rng.gen_range(3..30) {
                if rng.gen_bool(0.25) {
                    rows.push(silence_row(rng.gen_range(5..120), syl));
                } else {
                    rows.push(voiced_row(rng.gen_range(10..200), syl));
                }
                syl += 1;
            }
            let u = utt(rows);
            for class in SegmentClass::ALL {
                let clips = segment(&u, class).unwrap();
                let mut seen = vec![0usize; u.rows.len()];
                for c in &clips {
                    for i in c.row_range.clone() {
                        seen[i] += 1;
                    }
                    // clip boundaries never split a syllable
                    if c.row_range.start > 0 {
                        assert_ne!(
                            u.rows[c.row_range.start].syllable_index,
                            u.rows[c.row_range.start - 1].syllable_index
                        );
                    }
                }
                for (i, count) in seen.iter().enumerate() {
                    if !u.rows[i].is_silence() {
                        assert_eq!(*count, 1, "row {i} in {count} clips");
                    } else {
                        assert!(*count <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn vs_augment_is_deterministic_with_stable_ids() {
        let rows = vec![
            voiced_row(300, 0),
            silence_row(30, 1),
            voiced_row(400, 2),
            silence_row(30, 3),
            voiced_row(200, 4),
        ];
        let corpus = vec![utt(rows)];
        let a = vs_augment(&corpus).unwrap();
        let b = vs_augment(&corpus).unwrap();
        assert_eq!(a, b);
        let ids: Vec<&str> = a.iter().map(|c| c.clip_id.as_str()).collect();
        let mut dedup = ids.clone();
        dedup.dedup();
        assert_eq!(ids, dedup);
        // three class tags present
        for class in SegmentClass::ALL {
            assert!(a.iter().any(|c| c.class == class));
        }
    }

    #[test]
    fn manifest_round_trips() {
        let rows = vec![voiced_row(300, 0), silence_row(30, 1), voiced_row(400, 2)];
        let corpus = vec![utt(rows)];
        let clips = vs_augment(&corpus).unwrap();
        let mut buf = Vec::new();
        write_manifest(&clips, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("clip_id"));
        let back = read_manifest(&buf[..]).unwrap();
        assert_eq!(back.len(), clips.len());
        for (x, y) in back.iter().zip(&clips) {
            assert_eq!(x.clip_id, y.clip_id);
            assert_eq!(x.class, y.class);
            assert_eq!(x.start_sec, y.start_sec);
        }
    }

    fn tiny_score() -> Score {
        Score {
            bpm: 120.0,
            events: vec![SyllableEvent {
                pinyin: "ma".into(),
                notes: vec![Note {
                    pitch: NotePitch { midi: 60, rest: false },
                    beats: Beats::new(1, 1),
                    slur: Slur::Null,
                    tied_from_prev: false,
                }],
            }],
            singer_id: None,
        }
    }

    #[test]
    fn transposition_shifts_inverts_and_validates() {
        let score = tiny_score();
        let up = transpose_score(&score, 1).unwrap();
        assert_eq!(up.events[0].notes[0].pitch.midi, 61);
        assert_eq!(
            midi_from_spn('C', 1, 4).unwrap().midi,
            up.events[0].notes[0].pitch.midi
        );

        let same = transpose_score(&score, 0).unwrap();
        assert_eq!(same, score);

        let back = transpose_score(&up, -1).unwrap();
        assert_eq!(back, score);

        let mut high = score.clone();
        high.events[0].notes[0].pitch.midi = 127;
        assert!(transpose_score(&high, 1).is_err());
    }
}
