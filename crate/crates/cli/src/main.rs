//! Command-line front end wiring the pipeline stages together. Every
//! subcommand exits 0 on success and prints a single JSON error line on
//! failure; identical config and seed give identical outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use svs_core::acoustic::{AcousticExample, AcousticModel, AcousticModelConfig, Recipe};
use svs_core::config::RunConfig;
use svs_core::dsp::wav::read_wav;
use svs_core::dsp::{features, read_features, write_features, AcousticFrame, NormStats, NUM_BANDS};
use svs_core::duration::{postprocess, DurationModel, DurationModelConfig};
use svs_core::metrics::{F0Frame, MetricsConfig, MetricsReport};
use svs_core::real::TrainScalar;
use svs_core::rows::{
    attach_ground_truth, build_rows, parse_intervals, read_rows_binary, write_rows_binary,
    write_rows_tsv, Utterance,
};
use svs_core::score::{parse_musicxml, Lexicon};
use svs_core::synth::{generate_corpus, read_corpus_manifest, write_corpus, CorpusEntry};

#[derive(Parser)]
#[command(name = "svs", version, about = "singing-voice-synthesis training front end")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a MusicXML score into phoneme rows
    Parse {
        score: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write human-readable TSV instead of the binary row format
        #[arg(long)]
        tsv: bool,
    },
    /// Attach ground-truth durations from a phoneme interval file
    Align {
        rows: PathBuf,
        intervals: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract 26-dim acoustic features from a 24 kHz mono WAV
    Featurize {
        audio: PathBuf,
        /// Fit normalization stats to this file (or apply them if the
        /// stats file already exists)
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a corpus into variable-length training clips
    Augment {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: AugMode,
        /// Also emit clips for scores transposed one semitone each way
        #[arg(long)]
        transpose: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the duration model on an aligned corpus
    TrainDur {
        manifest: PathBuf,
        #[arg(long)]
        no_syllable_loss: bool,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict per-row frame durations for a row file
    PredictDur {
        ckpt: PathBuf,
        rows: PathBuf,
        /// Snap predictions onto exact note durations
        #[arg(long)]
        postprocess: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the acoustic model on an aligned corpus with audio
    TrainAc {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        recipe: RecipeArg,
        /// Checkpoint to start from (required for finetune)
        #[arg(long)]
        init: Option<PathBuf>,
        /// Keep only this singer's songs (typical for finetune)
        #[arg(long)]
        singer: Option<String>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acoustic model over rows and write denormalized features
    SynthFeatures {
        ckpt: PathBuf,
        rows: PathBuf,
        /// Durations TSV (from predict-dur); ground-truth or note
        /// durations are used when omitted
        #[arg(long)]
        durations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and reference artifacts
    Evaluate {
        pred: PathBuf,
        reference: PathBuf,
        #[arg(long, value_enum)]
        kind: EvalKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic corpus
    GenSynthCorpus {
        #[arg(long)]
        singers: usize,
        #[arg(long)]
        songs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AugMode {
    Vs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Pretrain,
    Finetune,
}

impl From<RecipeArg> for Recipe {
    fn from(r: RecipeArg) -> Recipe {
        match r {
            RecipeArg::Pretrain => Recipe::PretrainMultiSinger,
            RecipeArg::Finetune => Recipe::FinetuneSingle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Dur,
    F0,
    Feat,
}

#[derive(Serialize, Deserialize)]
struct DurCkptMeta {
    config: DurationModelConfig,
}

#[derive(Serialize, Deserialize)]
struct AcCkptMeta {
    config: AcousticModelConfig,
    norm: NormStats,
}

fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| path.display().to_string())?;
    Ok(())
}

/// Load one corpus entry into an aligned utterance; paths in the
/// manifest are relative to the manifest's directory.
fn load_entry(base: &Path, entry: &CorpusEntry) -> Result<Utterance> {
    let xml = fs::read(base.join(&entry.musicxml))
        .with_context(|| entry.musicxml.clone())?;
    let score = parse_musicxml(&xml)?;
    let mut rows = build_rows(&score, None)?;
    let text = fs::read_to_string(base.join(&entry.intervals))
        .with_context(|| entry.intervals.clone())?;
    let intervals = parse_intervals(&text)?;
    attach_ground_truth(&mut rows, &intervals)?;
    Ok(Utterance {
        utterance_id: entry.utterance_id.clone(),
        singer_id: Some(entry.singer_id.clone()),
        rows,
        span: None,
    })
}

/// Analysis windows shave a frame off the tail; pad or trim the feature
/// track to the exact frame total the durations demand.
fn fit_frames(mut frames: Vec<AcousticFrame<f64>>, expected: usize) -> Result<Vec<AcousticFrame<f64>>> {
    if frames.is_empty() {
        bail!("no feature frames");
    }
    while frames.len() < expected {
        frames.push(*frames.last().unwrap());
    }
    frames.truncate(expected);
    Ok(frames)
}

fn read_durations_tsv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let last = line.split_whitespace().last().unwrap();
        out.push(
            last.parse::<f64>()
                .with_context(|| format!("{}:{}: bad duration '{last}'", path.display(), i + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{}: no durations", path.display());
    }
    Ok(out)
}

fn frames_to_f0(frames: &[AcousticFrame<f64>], threshold: f64) -> Vec<F0Frame> {
    frames
        .iter()
        .map(|f| F0Frame {
            f0_hz: f.log_f0().exp(),
            voiced: f.pitch_corr() >= threshold,
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    match cli.cmd {
        Cmd::Parse { score, lexicon, out, tsv } => {
            let lex = match &lexicon {
                Some(p) => Some(Lexicon::parse(
                    &fs::read_to_string(p).with_context(|| p.display().to_string())?,
                )?),
                None => None,
            };
            let xml = fs::read(&score).with_context(|| score.display().to_string())?;
            let parsed = parse_musicxml(&xml)?;
            let rows = build_rows(&parsed, lex.as_ref())?;
            let utt = Utterance {
                utterance_id: score
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "score".into()),
                singer_id: parsed.singer_id.clone(),
                rows,
                span: None,
            };
            let mut file = fs::File::create(&out).with_context(|| out.display().to_string())?;
            if tsv {
                write_rows_tsv(&utt, &mut file)?;
            } else {
                write_rows_binary(&utt, &mut file)?;
            }
        }
        Cmd::Align { rows, intervals, out } => {
            let mut utt = read_rows_binary(
                &mut fs::File::open(&rows).with_context(|| rows.display().to_string())?,
            )?;
            let text = fs::read_to_string(&intervals)
                .with_context(|| intervals.display().to_string())?;
            attach_ground_truth(&mut utt.rows, &parse_intervals(&text)?)?;
            let mut file = fs::File::create(&out).with_context(|| out.display().to_string())?;
            write_rows_binary(&utt, &mut file)?;
        }
        Cmd::Featurize { audio, stats, out } => {
            let wave = read_wav::<f64>(&audio)?;
            let mut frames = features(&wave)?;
            if let Some(stats_path) = &stats {
                let norm = if stats_path.exists() {
                    read_json::<NormStats>(stats_path)?
                } else {
                    let fitted = NormStats::fit(&frames)?;
                    write_json(stats_path, &fitted)?;
                    fitted
                };
                norm.normalize(&mut frames)?;
            }
            let mut file = fs::File::create(&out).with_context(|| out.display().to_string())?;
            write_features(&frames, &mut file)?;
        }
        Cmd::Augment { manifest, mode: AugMode::Vs, transpose, out } => {
            let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let entries = read_corpus_manifest(&manifest)?;
            let mut utts = Vec::new();
            for entry in &entries {
                utts.push(load_entry(&base, entry)?);
                if transpose {
                    let xml = fs::read(base.join(&entry.musicxml))?;
                    let score = parse_musicxml(&xml)?;
                    for (suffix, semitones) in [("+1", 1), ("-1", -1)] {
                        let shifted = svs_core::augment::transpose_score(&score, semitones)?;
                        let mut rows = build_rows(&shifted, None)?;
                        let text = fs::read_to_string(base.join(&entry.intervals))?;
                        attach_ground_truth(&mut rows, &parse_intervals(&text)?)?;
                        utts.push(Utterance {
                            utterance_id: format!("{}{suffix}", entry.utterance_id),
                            singer_id: Some(entry.singer_id.clone()),
                            rows,
                            span: None,
                        });
                    }
                }
            }
            let clips = svs_core::augment::vs_augment(&utts)?;
            let mut file = fs::File::create(&out).with_context(|| out.display().to_string())?;
            svs_core::augment::write_manifest(&clips, &mut file)?;
        }
        Cmd::TrainDur { manifest, no_syllable_loss, ckpt, report, epochs, lr, seed } => {
            let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let corpus: Vec<Utterance> = read_corpus_manifest(&manifest)?
                .iter()
                .map(|e| load_entry(&base, e))
                .collect::<Result<_>>()?;
            let seed = seed.unwrap_or(config.seed);
            let mut model: DurationModel<TrainScalar> =
                DurationModel::new(config.duration_model.clone(), seed)?;
            let train_report = svs_core::duration::train_duration(
                &mut model,
                &corpus,
                epochs.unwrap_or(config.training.duration_epochs),
                lr.unwrap_or(config.training.duration_lr),
                seed,
                !no_syllable_loss && config.training.use_syllable_loss,
            )?;
            model.store.save(&ckpt)?;
            write_json(&meta_path(&ckpt), &DurCkptMeta { config: model.config.clone() })?;
            if let Some(report_path) = report {
                write_json(&report_path, &train_report)?;
            }
        }
        Cmd::PredictDur { ckpt, rows, postprocess: snap, out } => {
            let meta: DurCkptMeta = read_json(&meta_path(&ckpt))?;
            let mut model: DurationModel<TrainScalar> = DurationModel::new(meta.config, 0)?;
            model.store.load(&ckpt)?;
            let utt = read_rows_binary(
                &mut fs::File::open(&rows).with_context(|| rows.display().to_string())?,
            )?;
            let pred = model.predict_frames(&utt.rows)?;
            let mut text = String::new();
            if snap {
                for (row, d) in utt.rows.iter().zip(postprocess(&pred, &utt.rows)?) {
                    text.push_str(&format!("{}\t{d}\n", row.phoneme()));
                }
            } else {
                for (row, d) in utt.rows.iter().zip(&pred) {
                    text.push_str(&format!("{}\t{d:.6}\n", row.phoneme()));
                }
            }
            fs::write(&out, text).with_context(|| out.display().to_string())?;
        }
        Cmd::TrainAc {
            manifest, recipe, init, singer, ckpt, report, epochs, lr, seed,
        } => {
            let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let mut entries = read_corpus_manifest(&manifest)?;
            if let Some(name) = &singer {
                entries.retain(|e| &e.singer_id == name);
                if entries.is_empty() {
                    bail!("no songs for singer '{name}'");
                }
            }
            // fit normalization over the whole training set, or reuse
            // the stats of the checkpoint we start from
            let mut raw: Vec<(Utterance, Vec<AcousticFrame<f64>>)> = Vec::new();
            for entry in &entries {
                let utt = load_entry(&base, entry)?;
                let wave = read_wav::<f64>(&base.join(&entry.wav))?;
                let total: u32 = utt.rows.iter().map(|r| r.gt_dur.unwrap()).sum();
                let frames = fit_frames(features(&wave)?, total as usize)?;
                raw.push((utt, frames));
            }
            let recipe: Recipe = recipe.into();
            let (model_config, norm) = match (&init, recipe) {
                (Some(init_path), _) => {
                    let meta: AcCkptMeta = read_json(&meta_path(init_path))?;
                    (meta.config, meta.norm)
                }
                (None, Recipe::FinetuneSingle) => {
                    bail!("finetune recipe requires --init")
                }
                (None, Recipe::PretrainMultiSinger) => {
                    let all: Vec<AcousticFrame<f64>> =
                        raw.iter().flat_map(|(_, f)| f.iter().copied()).collect();
                    let mut singers: Vec<&str> =
                        entries.iter().map(|e| e.singer_id.as_str()).collect();
                    singers.sort();
                    singers.dedup();
                    let mut mc = config.acoustic_model.clone();
                    mc.speakers = mc.speakers.max(singers.len());
                    (mc, NormStats::fit(&all)?)
                }
            };
            let corpus: Vec<AcousticExample> = raw
                .into_iter()
                .map(|(utterance, mut frames)| {
                    norm.normalize(&mut frames)?;
                    let target = frames.iter().map(|f| f.values).collect();
                    Ok(AcousticExample { utterance, target })
                })
                .collect::<Result<_>>()?;
            let seed = seed.unwrap_or(config.seed);
            let mut model: AcousticModel<TrainScalar> =
                AcousticModel::new(model_config, seed)?;
            let train_report = svs_core::acoustic::train_acoustic(
                &mut model,
                &corpus,
                recipe,
                init.as_deref(),
                epochs.unwrap_or(config.training.acoustic_epochs),
                lr.unwrap_or(config.training.acoustic_lr),
                seed,
            )?;
            model.store.save(&ckpt)?;
            write_json(&meta_path(&ckpt), &AcCkptMeta { config: model.config.clone(), norm })?;
            if let Some(report_path) = report {
                write_json(&report_path, &train_report)?;
            }
        }
        Cmd::SynthFeatures { ckpt, rows, durations, out } => {
            let meta: AcCkptMeta = read_json(&meta_path(&ckpt))?;
            let mut model: AcousticModel<TrainScalar> = AcousticModel::new(meta.config, 0)?;
            model.store.load(&ckpt)?;
            let utt = read_rows_binary(
                &mut fs::File::open(&rows).with_context(|| rows.display().to_string())?,
            )?;
            let durs: Vec<u32> = match &durations {
                Some(path) => read_durations_tsv(path)?
                    .iter()
                    .map(|d| d.round().max(1.0) as u32)
                    .collect(),
                None => utt
                    .rows
                    .iter()
                    .map(|r| r.gt_dur.unwrap_or(r.nominal_dur))
                    .collect(),
            };
            if durs.len() != utt.rows.len() {
                bail!(
                    "durations file has {} entries for {} rows",
                    durs.len(),
                    utt.rows.len()
                );
            }
            let pred = model.synthesize(&utt.rows, &durs)?;
            let mut frames: Vec<AcousticFrame<f64>> =
                pred.iter().map(|v| AcousticFrame { values: *v }).collect();
            meta.norm.denormalize(&mut frames)?;
            let mut file = fs::File::create(&out).with_context(|| out.display().to_string())?;
            write_features(&frames, &mut file)?;
        }
        Cmd::Evaluate { pred, reference, kind, out } => {
            let mut report = MetricsReport {
                config: MetricsConfig {
                    dur_acc_tolerance_frames: config.metrics.dur_acc_tolerance_frames,
                    voicing_threshold: config.metrics.voicing_threshold,
                },
                ..MetricsReport::default()
            };
            match kind {
                EvalKind::Dur => {
                    let p: Vec<u32> = read_durations_tsv(&pred)?
                        .iter()
                        .map(|d| d.round().max(0.0) as u32)
                        .collect();
                    let r: Vec<u32> = read_durations_tsv(&reference)?
                        .iter()
                        .map(|d| d.round().max(0.0) as u32)
                        .collect();
                    report.dur_acc = Some(svs_core::metrics::dur_acc(
                        &p,
                        &r,
                        report.config.dur_acc_tolerance_frames,
                    )?);
                    report.dur_corr = svs_core::metrics::dur_corr(&p, &r)?;
                }
                EvalKind::F0 | EvalKind::Feat => {
                    let mut p: Vec<AcousticFrame<f64>> = read_features(
                        &mut fs::File::open(&pred).with_context(|| pred.display().to_string())?,
                    )?;
                    let mut r: Vec<AcousticFrame<f64>> = read_features(
                        &mut fs::File::open(&reference)
                            .with_context(|| reference.display().to_string())?,
                    )?;
                    // analysis and synthesis tracks can disagree by the
                    // trailing window; compare the common prefix
                    let n = p.len().min(r.len());
                    p.truncate(n);
                    r.truncate(n);
                    match kind {
                        EvalKind::F0 => {
                            let threshold = report.config.voicing_threshold;
                            let pf = frames_to_f0(&p, threshold);
                            let rf = frames_to_f0(&r, threshold);
                            report.f0_rmse = svs_core::metrics::f0_rmse(&pf, &rf)?;
                            report.f0_corr = svs_core::metrics::f0_corr(&pf, &rf)?;
                            report.vuv_error = Some(svs_core::metrics::vuv_error(&pf, &rf)?);
                        }
                        EvalKind::Feat => {
                            let to_bands = |fs: &[AcousticFrame<f64>]| -> Vec<[f64; NUM_BANDS]> {
                                fs.iter()
                                    .map(|f| {
                                        let mut b = [0.0; NUM_BANDS];
                                        b.copy_from_slice(&f.values[..NUM_BANDS]);
                                        b
                                    })
                                    .collect()
                            };
                            report.bfccd =
                                Some(svs_core::metrics::bfccd(&to_bands(&p), &to_bands(&r))?);
                        }
                        EvalKind::Dur => unreachable!(),
                    }
                }
            }
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            if let Some(out_path) = &out {
                fs::write(out_path, &text).with_context(|| out_path.display().to_string())?;
            }
            print!("{text}");
        }
        Cmd::GenSynthCorpus { singers, songs, seed, out } => {
            let corpus = generate_corpus(singers, songs, seed)?;
            write_corpus(&corpus, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{e:#}") })
            );
            ExitCode::FAILURE
        }
    }
}
