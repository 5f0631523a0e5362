//! Versioned run configuration. Every tunable constant the pipeline
//! relies on appears here with its default so runs are auditable; files
//! with unknown keys or a foreign schema version are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticModelConfig;
use crate::duration::DurationModelConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspSettings {
    pub sample_rate: u32,
    pub hop: usize,
    pub window: usize,
    pub fft_size: usize,
    pub num_bands: usize,
    pub band_fmax_hz: f64,
    pub log_energy_floor: f64,
    pub lpc_order: usize,
    pub lag_window_hz: f64,
    pub ac_noise_floor: f64,
    pub pitch_min_lag: usize,
    pub pitch_max_lag: usize,
    pub pitch_window: usize,
    pub voicing_threshold: f64,
    pub unvoiced_f0_hz: f64,
}

impl Default for DspSettings {
    fn default() -> Self {
        use crate::dsp;
        DspSettings {
            sample_rate: dsp::SAMPLE_RATE,
            hop: dsp::HOP,
            window: dsp::WINDOW,
            fft_size: dsp::FFT_SIZE,
            num_bands: dsp::NUM_BANDS,
            band_fmax_hz: dsp::BAND_FMAX,
            log_energy_floor: dsp::LOG_ENERGY_FLOOR,
            lpc_order: dsp::LPC_ORDER,
            lag_window_hz: dsp::LAG_WINDOW_HZ,
            ac_noise_floor: dsp::AC_NOISE_FLOOR,
            pitch_min_lag: dsp::PITCH_MIN_LAG,
            pitch_max_lag: dsp::PITCH_MAX_LAG,
            pitch_window: dsp::PITCH_WINDOW,
            voicing_threshold: dsp::VOICING_THRESHOLD,
            unvoiced_f0_hz: dsp::UNVOICED_F0_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub duration_epochs: usize,
    pub duration_lr: f64,
    pub use_syllable_loss: bool,
    pub acoustic_epochs: usize,
    pub acoustic_lr: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            duration_epochs: 40,
            duration_lr: 0.01,
            use_syllable_loss: true,
            acoustic_epochs: 60,
            acoustic_lr: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    pub pause_threshold_frames: u32,
    /// Score transposition by one semitone either way; off by default.
    pub transpose: bool,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            pause_threshold_frames: crate::augment::PAUSE_THRESHOLD_FRAMES,
            transpose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSettings {
    pub dur_acc_tolerance_frames: u32,
    pub voicing_threshold: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            dur_acc_tolerance_frames: crate::metrics::DUR_ACC_TOLERANCE_FRAMES,
            voicing_threshold: crate::dsp::VOICING_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessSettings {
    pub initial_cap_frames: u32,
    pub silence_merge_threshold_sec: f64,
}

impl Default for PostprocessSettings {
    fn default() -> Self {
        PostprocessSettings {
            initial_cap_frames: crate::duration::INITIAL_CAP_FRAMES,
            silence_merge_threshold_sec: crate::rows::SILENCE_MERGE_THRESHOLD_SEC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub dsp: DspSettings,
    pub duration_model: DurationModelConfig,
    pub acoustic_model: AcousticModelConfig,
    pub training: TrainingSettings,
    pub augment: AugmentSettings,
    pub metrics: MetricSettings,
    pub postprocess: PostprocessSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            dsp: DspSettings::default(),
            duration_model: DurationModelConfig::default(),
            acoustic_model: AcousticModelConfig::default(),
            training: TrainingSettings::default(),
            augment: AugmentSettings::default(),
            metrics: MetricSettings::default(),
            postprocess: PostprocessSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if value.get("schema_version").is_none() {
            return Err(Error::Config("missing schema_version".into()));
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, config);
        for key in [
            "schema_version = 1",
            "voicing_threshold = 0.3",
            "initial_cap_frames = 10",
            "pause_threshold_frames = 10",
            "grl_lambda = 0.02",
            "f0_weight = 1.2",
            "dur_acc_tolerance_frames = 5",
        ] {
            assert!(text.contains(key), "missing {key} in:\n{text}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("schema_version = 1\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err =
            RunConfig::parse("schema_version = 1\n[dsp]\nsample_rte = 24000\n").unwrap_err();
        assert!(err.to_string().contains("sample_rte"), "{err}");
    }

    #[test]
    fn schema_version_is_enforced() {
        assert!(RunConfig::parse("schema_version = 2\n").is_err());
        assert!(RunConfig::parse("").is_err());
        assert!(RunConfig::parse("schema_version = 1\n").is_ok());
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let config = RunConfig::parse("schema_version = 1\nseed = 99\n[training]\nduration_lr = 0.5\n")
            .unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.training.duration_lr, 0.5);
        assert_eq!(config.training.acoustic_epochs, 60);
        assert_eq!(config.dsp.sample_rate, 24_000);
    }
}
