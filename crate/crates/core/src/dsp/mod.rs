//! Acoustic feature extraction for the 24 kHz vocoder front end:
//! 24-band Bark cepstra, autocorrelation pitch, BFCC-to-LPC conversion,
//! and min-max feature scaling.

mod bfcc;
mod featio;
mod lpc;
mod norm;
mod pitch;
pub mod wav;

pub use bfcc::{analyze_bfcc, bark, bark_band_edges, dct2_orthonormal, dct3_orthonormal};
pub use featio::{read_features, write_features, FEAT_MAGIC};
pub use lpc::{bfcc_to_lpc, levinson_durbin, lpc_power_spectrum};
pub use norm::NormStats;
pub use pitch::{estimate_pitch, PitchFrame};

use rustfft::FftNum;

use crate::error::{Error, Result};
use crate::real::Real;

/// Scalar bound for the DSP paths.
pub trait DspScalar: Real + FftNum {}
impl<S: Real + FftNum> DspScalar for S {}

// One block for every analysis constant. The vocoder contract fixes the
// 24 kHz rate and the 24-dim cepstrum; the rest mirrors the 16 kHz
// LPCNet analysis scaled up to 24 kHz.
pub const SAMPLE_RATE: u32 = 24_000;
pub const HOP: usize = 240; // 10 ms
pub const WINDOW: usize = 480; // 20 ms
pub const FFT_SIZE: usize = 512;
pub const NUM_BANDS: usize = 24;
pub const BAND_FMAX: f64 = 12_000.0;
pub const LOG_ENERGY_FLOOR: f64 = 1e-10;
pub const LPC_ORDER: usize = 16;
pub const LAG_WINDOW_HZ: f64 = 60.0;
pub const AC_NOISE_FLOOR: f64 = 1e-5;
pub const PITCH_MIN_LAG: usize = 60; // 400 Hz
pub const PITCH_MAX_LAG: usize = 600; // 40 Hz
pub const PITCH_WINDOW: usize = 720; // 30 ms
pub const VOICING_THRESHOLD: f64 = 0.3;
pub const UNVOICED_F0_HZ: f64 = 100.0;
pub const FEATURE_DIM: usize = 26;
pub const IDX_LOG_F0: usize = 24;
pub const IDX_PITCH_CORR: usize = 25;

/// Documentation-only constants for the downstream sample-level vocoder;
/// the waveform network itself is out of scope here.
pub const VOCODER_GRU_A_WIDTH: usize = 512;
pub const VOCODER_GRU_B_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<S> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: DspScalar> Waveform<S> {
    pub fn new(samples: Vec<S>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One 10 ms analysis frame: 24 Bark cepstral coefficients, log-F0, and
/// pitch correlation, in that fixed order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticFrame<S> {
    pub values: [S; FEATURE_DIM],
}

impl<S: DspScalar> AcousticFrame<S> {
    pub fn bfcc(&self) -> &[S] {
        &self.values[..NUM_BANDS]
    }

    pub fn log_f0(&self) -> S {
        self.values[IDX_LOG_F0]
    }

    pub fn pitch_corr(&self) -> S {
        self.values[IDX_PITCH_CORR]
    }
}

/// Number of analysis frames for a given sample count.
pub fn frame_count(samples: usize) -> Result<usize> {
    if samples < WINDOW {
        return Err(Error::validation(format!(
            "waveform too short: {samples} samples, need at least {WINDOW}"
        )));
    }
    Ok((samples - WINDOW) / HOP + 1)
}

/// Full 26-dim analysis: BFCC plus pitch parameters per frame.
pub fn features<S: DspScalar>(w: &Waveform<S>) -> Result<Vec<AcousticFrame<S>>> {
    let cepstra = analyze_bfcc(w)?;
    let pitch = estimate_pitch(w)?;
    debug_assert_eq!(cepstra.len(), pitch.len());
    Ok(cepstra
        .into_iter()
        .zip(pitch)
        .map(|(bfcc, p)| {
            let mut values = [S::zero(); FEATURE_DIM];
            values[..NUM_BANDS].copy_from_slice(&bfcc);
            values[IDX_LOG_F0] = p.log_f0;
            values[IDX_PITCH_CORR] = p.pitch_corr;
            AcousticFrame { values }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_arithmetic() {
        assert_eq!(frame_count(WINDOW).unwrap(), 1);
        assert_eq!(frame_count(WINDOW + HOP - 1).unwrap(), 1);
        assert_eq!(frame_count(WINDOW + HOP).unwrap(), 2);
        assert_eq!(frame_count(24_000).unwrap(), 99);
        assert!(frame_count(WINDOW - 1).is_err());
    }

    #[test]
    fn silence_features() {
        let w: Waveform<f64> = Waveform::new(vec![0.0; 24_000]);
        let frames = features(&w).unwrap();
        assert_eq!(frames.len(), 99);
        for f in &frames {
            assert_eq!(f.values.len(), FEATURE_DIM);
            assert_eq!(f.bfcc(), frames[0].bfcc());
            assert!((f.log_f0() - UNVOICED_F0_HZ.ln()).abs() < 1e-12);
            assert_eq!(f.pitch_corr(), 0.0);
        }
    }

    #[test]
    fn pitch_dims_match_estimator_output() {
        let w: Waveform<f64> = Waveform::new(
            (0..24_000)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    2.0 * (t * 220.0).fract() - 1.0
                })
                .collect(),
        );
        let frames = features(&w).unwrap();
        let pitch = estimate_pitch(&w).unwrap();
        for (f, p) in frames.iter().zip(&pitch) {
            assert_eq!(f.log_f0(), p.log_f0);
            assert_eq!(f.pitch_corr(), p.pitch_corr);
        }
    }
}
