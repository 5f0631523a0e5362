//! A parser for the part-wise, single-voice MusicXML subset the pipeline
//! consumes: pitch (step/alter/octave), duration with divisions, lyric,
//! slur and tie marks, and a tempo direction.

use num_rational::Ratio;
use roxmltree::{Document, Node};

use crate::error::{Error, Result};
use crate::score::{midi_from_spn, Beats, Note, NotePitch, Score, SyllableEvent};
use crate::vocab::Slur;

pub fn parse_musicxml(bytes: &[u8]) -> Result<Score> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(format!("score is not valid UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| {
        Error::parse(format!(
            "malformed XML at line {}: {e}",
            e.pos().row
        ))
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(Error::parse(format!(
            "expected <score-partwise>, found <{}>",
            root.tag_name().name()
        )));
    }
    let part = child(root, "part")
        .ok_or_else(|| Error::parse("score has no <part>"))?;
    if !doc.descendants().any(|n| n.has_tag_name("lyric")) {
        return Err(Error::validation("no lyric events"));
    }

    let singer_id = child(root, "identification")
        .and_then(|id| child(id, "creator"))
        .map(|c| c.text().unwrap_or("").trim().to_string())
        .filter(|s| !s.is_empty());

    let mut bpm: Option<f64> = None;
    let mut divisions: i64 = 1;
    let mut events: Vec<SyllableEvent> = Vec::new();
    let mut saw_lyric = false;
    // Open tie: index of the event and note the next tied note merges into.
    let mut tie_open: Option<(usize, usize)> = None;

    for measure in part.children().filter(|n| n.has_tag_name("measure")) {
        if let Some(attrs) = child(measure, "attributes") {
            if let Some(div) = child(attrs, "divisions") {
                divisions = text_as::<i64>(div, "divisions")?;
                if divisions <= 0 {
                    return Err(Error::validation(format!(
                        "divisions must be positive, got {divisions}"
                    )));
                }
            }
        }
        for direction in measure.children().filter(|n| n.has_tag_name("direction")) {
            if bpm.is_none() {
                bpm = read_tempo(direction)?;
            }
        }
        for note_el in measure.children().filter(|n| n.has_tag_name("note")) {
            let line = line_of(note_el, text);
            let duration_el = child(note_el, "duration")
                .ok_or_else(|| Error::parse(format!("line {line}: note without <duration>")))?;
            let duration = text_as::<i64>(duration_el, "duration")?;
            if duration <= 0 {
                return Err(Error::validation(format!(
                    "line {line}: non-positive note duration {duration}"
                )));
            }
            let beats: Beats = Ratio::new(duration, divisions);
            let lyric = read_lyric(note_el);
            let is_rest = child(note_el, "rest").is_some();

            if is_rest {
                if lyric.is_some() {
                    return Err(Error::validation(format!(
                        "line {line}: lyric on a rest"
                    )));
                }
                tie_open = None;
                events.push(SyllableEvent {
                    pinyin: String::new(),
                    notes: vec![Note {
                        pitch: NotePitch::rest(),
                        beats,
                        slur: Slur::Null,
                        tied_from_prev: false,
                    }],
                });
                continue;
            }

            let pitch_el = child(note_el, "pitch")
                .ok_or_else(|| Error::parse(format!("line {line}: note without <pitch>")))?;
            let step = child(pitch_el, "step")
                .and_then(|n| n.text())
                .and_then(|t| t.trim().chars().next())
                .ok_or_else(|| Error::parse(format!("line {line}: pitch without <step>")))?;
            let octave = text_as::<i32>(
                child(pitch_el, "octave")
                    .ok_or_else(|| Error::parse(format!("line {line}: pitch without <octave>")))?,
                "octave",
            )?;
            let alter = match child(pitch_el, "alter") {
                Some(n) => text_as::<i32>(n, "alter")?,
                None => 0,
            };
            let pitch = midi_from_spn(step, alter, octave)?;
            let (tie_starts, tie_stops) = read_ties(note_el);
            let slur = read_slur(note_el);

            // A tied continuation merges into the note that opened the tie.
            if tie_stops {
                if let Some((ev_idx, note_idx)) = tie_open.take() {
                    let prev = &mut events[ev_idx].notes[note_idx];
                    if prev.pitch != pitch {
                        return Err(Error::validation(format!(
                            "line {line}: tie across different pitches"
                        )));
                    }
                    prev.beats += beats;
                    if tie_starts {
                        tie_open = Some((ev_idx, note_idx));
                    }
                    continue;
                }
            }

            let note = Note {
                pitch,
                beats,
                slur,
                tied_from_prev: false,
            };
            match lyric {
                Some(lyric_text) => {
                    saw_lyric = true;
                    events.push(SyllableEvent {
                        pinyin: lyric_text,
                        notes: vec![note],
                    });
                }
                None => {
                    // Melisma: attach to the previous sung syllable even
                    // when the score omits the slur mark.
                    let prev = events
                        .iter_mut()
                        .rev()
                        .find(|e| !e.is_silence())
                        .ok_or_else(|| {
                            Error::validation(format!(
                                "line {line}: note without lyric and no preceding syllable"
                            ))
                        })?;
                    prev.notes.push(note);
                }
            }
            if tie_starts {
                let ev_idx = events.len() - 1;
                let note_idx = events[ev_idx].notes.len() - 1;
                tie_open = Some((ev_idx, note_idx));
            }
        }
    }

    if !saw_lyric {
        return Err(Error::validation("no lyric events"));
    }
    let bpm = bpm.ok_or_else(|| Error::validation("tempo required"))?;
    if events.is_empty() {
        return Err(Error::validation("score has no notes"));
    }
    Ok(Score {
        bpm,
        events,
        singer_id,
    })
}

fn child<'a>(node: Node<'a, 'a>, name: &str) -> Option<Node<'a, 'a>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn text_as<T: std::str::FromStr>(node: Node, what: &str) -> Result<T> {
    node.text()
        .map(str::trim)
        .and_then(|t| t.parse::<T>().ok())
        .ok_or_else(|| Error::parse(format!("invalid <{what}> value")))
}

fn line_of(node: Node, text: &str) -> usize {
    let pos = node.range().start;
    text[..pos].bytes().filter(|b| *b == b'\n').count() + 1
}

fn read_tempo(direction: Node) -> Result<Option<f64>> {
    if let Some(sound) = child(direction, "sound") {
        if let Some(t) = sound.attribute("tempo") {
            let bpm: f64 = t
                .parse()
                .map_err(|_| Error::parse(format!("invalid tempo '{t}'")))?;
            if !(bpm > 0.0) {
                return Err(Error::validation(format!("non-positive tempo {bpm}")));
            }
            return Ok(Some(bpm));
        }
    }
    if let Some(dt) = child(direction, "direction-type") {
        if let Some(metronome) = child(dt, "metronome") {
            if let Some(pm) = child(metronome, "per-minute") {
                let bpm = text_as::<f64>(pm, "per-minute")?;
                if !(bpm > 0.0) {
                    return Err(Error::validation(format!("non-positive tempo {bpm}")));
                }
                return Ok(Some(bpm));
            }
        }
    }
    Ok(None)
}

fn read_lyric(note_el: Node) -> Option<String> {
    child(note_el, "lyric")
        .and_then(|l| child(l, "text"))
        .and_then(|t| t.text())
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
}

fn read_ties(note_el: Node) -> (bool, bool) {
    let mut starts = false;
    let mut stops = false;
    for tie in note_el.children().filter(|n| n.has_tag_name("tie")) {
        match tie.attribute("type") {
            Some("start") => starts = true,
            Some("stop") => stops = true,
            _ => {}
        }
    }
    if let Some(notations) = child(note_el, "notations") {
        for tied in notations.children().filter(|n| n.has_tag_name("tied")) {
            match tied.attribute("type") {
                Some("start") => starts = true,
                Some("stop") => stops = true,
                _ => {}
            }
        }
    }
    (starts, stops)
}

fn read_slur(note_el: Node) -> Slur {
    if let Some(notations) = child(note_el, "notations") {
        for slur in notations.children().filter(|n| n.has_tag_name("slur")) {
            match slur.attribute("type") {
                Some("start") => return Slur::Start,
                Some("continue") => return Slur::Continue,
                Some("stop") => return Slur::Stop,
                _ => {}
            }
        }
    }
    Slur::Null
}
