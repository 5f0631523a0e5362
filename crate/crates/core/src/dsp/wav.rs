//! WAV PCM16 mono I/O at the fixed 24 kHz rate. Other rates and layouts
//! are rejected; resampling is the caller's job.

use std::path::Path;

use super::{DspScalar, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn read_wav<S: DspScalar>(path: &Path) -> Result<Waveform<S>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::validation(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::validation(format!(
            "{}: expected {SAMPLE_RATE} Hz, got {} (resample first)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::validation(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let samples: Vec<S> = reader
        .samples::<i16>()
        .map(|s| s.map(|v| S::of_f64(v as f64 / 32768.0)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(Waveform::new(samples))
}

pub fn write_wav<S: DspScalar>(w: &Waveform<S>, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for s in &w.samples {
        let v = (s.to_f64_lossy() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}
