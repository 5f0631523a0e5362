use std::fs;
use std::process::Command;

use svs_core::synth::generate_corpus;

fn svs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svs"))
}

#[test]
fn parse_reports_every_phoneme_row() {
    let dir = tempfile::tempdir().unwrap();
    let song = &generate_corpus(1, 1, 31).unwrap()[0];
    let score = dir.path().join("song.musicxml");
    fs::write(&score, &song.musicxml).unwrap();
    let out = dir.path().join("rows.tsv");

    let status = svs()
        .args(["parse", score.to_str().unwrap(), "--out", out.to_str().unwrap(), "--tsv"])
        .status()
        .unwrap();
    assert!(status.success());

    let text = fs::read_to_string(&out).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, song.rows.len());
}

#[test]
fn evaluate_dur_with_identical_tracks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let track = dir.path().join("durs.tsv");
    fs::write(&track, "a\t12\nb\t30\nc\t7\nd\t45\n").unwrap();

    let output = svs()
        .args(["evaluate", track.to_str().unwrap(), track.to_str().unwrap(), "--kind", "dur"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["dur_acc"], 1.0);
    assert_eq!(report["dur_corr"], 1.0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let status = svs().args(["parse", "x.xml", "--no-such-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_input_fails_with_error_line() {
    let output = svs()
        .args(["align", "/nonexistent/rows.bin", "/nonexistent/iv.tsv", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err: serde_json::Value =
        serde_json::from_slice(&output.stderr).expect("stderr carries a JSON error line");
    assert!(err["error"].is_string());
}
