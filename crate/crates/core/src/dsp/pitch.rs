//! Frame-level pitch: normalized autocorrelation over a 30 ms window,
//! lag search 60-600 samples (40-400 Hz at 24 kHz).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{
    DspScalar, Waveform, HOP, PITCH_MAX_LAG, PITCH_MIN_LAG, PITCH_WINDOW, SAMPLE_RATE,
    UNVOICED_F0_HZ, VOICING_THRESHOLD,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame<S> {
    pub log_f0: S,
    pub pitch_corr: S,
    pub voiced: bool,
}

/// Per-frame pitch track. Unvoiced frames carry log-F0 interpolated
/// between neighboring voiced frames (edges take the nearest voiced
/// value; an all-unvoiced signal falls back to log 100 Hz).
pub fn estimate_pitch<S: DspScalar>(w: &Waveform<S>) -> Result<Vec<PitchFrame<S>>> {
    let frames = super::frame_count(w.samples.len())?;
    let samples: Vec<f64> = w.samples.iter().map(|s| s.to_f64_lossy()).collect();

    // FFT long enough for cross-correlation of the window with the
    // window-plus-max-lag segment.
    let fft_len = (PITCH_WINDOW + PITCH_MAX_LAG + 1).next_power_of_two();
    let planner_fwd = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let planner_inv = FftPlanner::<f64>::new().plan_fft_inverse(fft_len);

    let mut raw: Vec<(f64, f64)> = Vec::with_capacity(frames); // (f0, corr)
    let mut seg_buf = vec![Complex::new(0.0, 0.0); fft_len];
    let mut win_buf = vec![Complex::new(0.0, 0.0); fft_len];
    for i in 0..frames {
        let start = i * HOP;
        let seg_end = (start + PITCH_WINDOW + PITCH_MAX_LAG).min(samples.len());
        let seg = &samples[start..seg_end];
        let win_len = PITCH_WINDOW.min(seg.len());

        // energies for the normalization denominators via prefix sums
        let mut prefix_sq = vec![0.0f64; seg.len() + 1];
        for (j, s) in seg.iter().enumerate() {
            prefix_sq[j + 1] = prefix_sq[j] + s * s;
        }

        for (j, c) in seg_buf.iter_mut().enumerate() {
            *c = Complex::new(seg.get(j).copied().unwrap_or(0.0), 0.0);
        }
        for (j, c) in win_buf.iter_mut().enumerate() {
            *c = Complex::new(
                if j < win_len { seg[j] } else { 0.0 },
                0.0,
            );
        }
        planner_fwd.process(&mut seg_buf);
        planner_fwd.process(&mut win_buf);
        // numerator(T) = sum_n win[n]*seg[n+T] = ifft(fft(seg)*conj(fft(win)))[T]
        for (s, x) in seg_buf.iter_mut().zip(win_buf.iter()) {
            *s *= x.conj();
        }
        planner_inv.process(&mut seg_buf);

        let mut corrs: Vec<(usize, f64)> = Vec::with_capacity(PITCH_MAX_LAG - PITCH_MIN_LAG + 1);
        for lag in PITCH_MIN_LAG..=PITCH_MAX_LAG {
            if lag >= seg.len() {
                break;
            }
            let overlap = win_len.min(seg.len() - lag);
            if overlap < PITCH_MIN_LAG {
                break;
            }
            let numerator = seg_buf[lag].re / fft_len as f64;
            let e0 = prefix_sq[overlap] - prefix_sq[0];
            let e1 = prefix_sq[lag + overlap] - prefix_sq[lag];
            if e0 <= 0.0 || e1 <= 0.0 {
                continue;
            }
            corrs.push((lag, numerator / (e0 * e1).sqrt()));
        }
        let (mut best_lag, mut best_corr) = corrs
            .iter()
            .copied()
            .fold((0usize, 0.0f64), |acc, (l, c)| if c > acc.1 { (l, c) } else { acc });
        // the peak can land on a multiple of the period; if a divided
        // lag correlates nearly as well, prefer it
        if best_lag > 0 {
            let corr_at = |lag: usize| -> f64 {
                corrs
                    .iter()
                    .filter(|(l, _)| l.abs_diff(lag) <= 2)
                    .map(|(_, c)| *c)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            for div in (2..=10usize).rev() {
                let cand = best_lag / div;
                if cand < PITCH_MIN_LAG {
                    continue;
                }
                let c = corr_at(cand);
                if c >= best_corr - 0.05 {
                    let refined = corrs
                        .iter()
                        .filter(|(l, _)| l.abs_diff(cand) <= 2)
                        .fold((cand, f64::NEG_INFINITY), |acc, (l, c)| {
                            if *c > acc.1 { (*l, *c) } else { acc }
                        });
                    best_lag = refined.0;
                    best_corr = refined.1;
                    break;
                }
            }
        }
        let corr = best_corr.clamp(0.0, 1.0);
        let f0 = if best_lag > 0 {
            SAMPLE_RATE as f64 / best_lag as f64
        } else {
            0.0
        };
        raw.push((f0, corr));
    }

    // fill unvoiced log-F0 by interpolation between voiced neighbors
    let voiced: Vec<bool> = raw.iter().map(|(_, c)| *c >= VOICING_THRESHOLD).collect();
    let mut log_f0 = vec![0.0f64; frames];
    let voiced_idx: Vec<usize> = (0..frames).filter(|i| voiced[*i]).collect();
    if voiced_idx.is_empty() {
        log_f0.iter_mut().for_each(|v| *v = UNVOICED_F0_HZ.ln());
    } else {
        for i in 0..frames {
            if voiced[i] {
                log_f0[i] = raw[i].0.ln();
                continue;
            }
            let next = voiced_idx.iter().find(|j| **j > i);
            let prev = voiced_idx.iter().rev().find(|j| **j < i);
            log_f0[i] = match (prev, next) {
                (Some(p), Some(n)) => {
                    let lp = raw[*p].0.ln();
                    let ln_ = raw[*n].0.ln();
                    let t = (i - p) as f64 / (n - p) as f64;
                    lp + t * (ln_ - lp)
                }
                (Some(p), None) => raw[*p].0.ln(),
                (None, Some(n)) => raw[*n].0.ln(),
                (None, None) => unreachable!(),
            };
        }
    }

    Ok((0..frames)
        .map(|i| PitchFrame {
            log_f0: S::of_f64(log_f0[i]),
            pitch_corr: S::of_f64(raw[i].1),
            voiced: voiced[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sawtooth(freq: f64, seconds: f64) -> Waveform<f64> {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| 2.0 * (i as f64 * freq / SAMPLE_RATE as f64).fract() - 1.0)
                .collect(),
        )
    }

    #[test]
    fn sawtooth_220_hz() {
        let frames = estimate_pitch(&sawtooth(220.0, 1.0)).unwrap();
        let interior = &frames[2..frames.len() - 4];
        let mut f0: Vec<f64> = interior.iter().map(|f| f.log_f0.exp()).collect();
        f0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = f0[f0.len() / 2];
        assert!((median - 220.0).abs() < 3.0, "median f0 {median}");
        for f in interior {
            assert!(f.pitch_corr > 0.9, "corr {}", f.pitch_corr);
            assert!(f.voiced);
        }
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w: Waveform<f64> =
            Waveform::new((0..24_000).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let frames = estimate_pitch(&w).unwrap();
        let voiced = frames.iter().filter(|f| f.voiced).count();
        assert!(
            (voiced as f64) < 0.1 * frames.len() as f64,
            "{voiced}/{} voiced",
            frames.len()
        );
    }

    #[test]
    fn silence_falls_back_to_100_hz() {
        let w: Waveform<f64> = Waveform::new(vec![0.0; 24_000]);
        let frames = estimate_pitch(&w).unwrap();
        for f in &frames {
            assert!(!f.voiced);
            assert!((f.log_f0 - 100.0f64.ln()).abs() < 1e-12);
            assert_eq!(f.pitch_corr, 0.0);
        }
    }

    #[test]
    fn unvoiced_gap_interpolates_between_voiced_neighbors() {
        // 0.5 s of 200 Hz, 0.3 s silence, 0.5 s of 300 Hz
        let mut samples = sawtooth(200.0, 0.5).samples;
        samples.extend(vec![0.0; 7200]);
        samples.extend(sawtooth(300.0, 0.5).samples);
        let frames = estimate_pitch(&Waveform::new(samples)).unwrap();
        let lo = 200.0f64.ln();
        let hi = 300.0f64.ln();
        for f in frames.iter().filter(|f| !f.voiced) {
            assert!(
                f.log_f0 >= lo - 0.1 && f.log_f0 <= hi + 0.1,
                "interpolated log f0 {} outside [{lo}, {hi}]",
                f.log_f0
            );
        }
    }
}
