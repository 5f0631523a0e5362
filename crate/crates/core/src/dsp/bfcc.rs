//! Bark-scale cepstral analysis: Hann window, 512-point FFT, 24
//! Bark-spaced triangular bands over 0-12 kHz, log energies, and an
//! orthonormal DCT-II.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{
    DspScalar, Waveform, BAND_FMAX, FFT_SIZE, HOP, LOG_ENERGY_FLOOR, NUM_BANDS, SAMPLE_RATE,
    WINDOW,
};
use crate::error::{Error, Result};

/// Traunmueller-style Bark warping.
pub fn bark(freq_hz: f64) -> f64 {
    13.0 * (0.00076 * freq_hz).atan() + 3.5 * ((freq_hz / 7500.0) * (freq_hz / 7500.0)).atan()
}

fn bark_inverse(target: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = BAND_FMAX;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bark(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// 26 band-edge frequencies, equally spaced on the Bark scale over
/// 0..=12 kHz. Band b is the triangle (edge[b], edge[b+1], edge[b+2]).
pub fn bark_band_edges() -> [f64; NUM_BANDS + 2] {
    let b_max = bark(BAND_FMAX);
    let mut edges = [0.0; NUM_BANDS + 2];
    for (i, e) in edges.iter_mut().enumerate() {
        *e = bark_inverse(b_max * i as f64 / (NUM_BANDS + 1) as f64);
    }
    edges[0] = 0.0;
    edges[NUM_BANDS + 1] = BAND_FMAX;
    edges
}

/// Triangular filterbank weights over the one-sided FFT bins.
fn filterbank() -> Vec<Vec<(usize, f64)>> {
    let edges = bark_band_edges();
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    let mut bands = Vec::with_capacity(NUM_BANDS);
    for b in 0..NUM_BANDS {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let mut weights = Vec::new();
        for k in 0..=FFT_SIZE / 2 {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if (f - center).abs() < 1e-12 {
                1.0
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                weights.push((k, w));
            }
        }
        bands.push(weights);
    }
    bands
}

/// Orthonormal DCT-II of a length-N slice.
pub fn dct2_orthonormal<S: DspScalar>(x: &[S]) -> Vec<S> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.to_f64_lossy()
                        * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / nf).cos()
                })
                .sum();
            S::of_f64(scale * sum)
        })
        .collect()
}

/// Inverse of [`dct2_orthonormal`] (orthonormal DCT-III).
pub fn dct3_orthonormal<S: DspScalar>(c: &[S]) -> Vec<S> {
    let n = c.len();
    let nf = n as f64;
    (0..n)
        .map(|i| {
            let sum: f64 = c
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 {
                        (1.0 / nf).sqrt()
                    } else {
                        (2.0 / nf).sqrt()
                    };
                    scale
                        * v.to_f64_lossy()
                        * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / nf).cos()
                })
                .sum();
            S::of_f64(sum)
        })
        .collect()
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Per-frame 24-dim Bark cepstra.
pub fn analyze_bfcc<S: DspScalar>(w: &Waveform<S>) -> Result<Vec<[S; NUM_BANDS]>> {
    let frames = super::frame_count(w.samples.len())?;
    if w.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("non-finite sample in waveform"));
    }
    let window = hann_periodic(WINDOW);
    let bands = filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0f64, 0.0); FFT_SIZE];
    for i in 0..frames {
        let start = i * HOP;
        for (j, c) in buf.iter_mut().enumerate() {
            let s = if j < WINDOW {
                w.samples[start + j].to_f64_lossy() * window[j]
            } else {
                0.0
            };
            *c = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..=FFT_SIZE / 2].iter().map(|c| c.norm_sqr()).collect();
        let log_energies: Vec<S> = bands
            .iter()
            .map(|weights| {
                let e: f64 = weights.iter().map(|(k, w)| power[*k] * w).sum();
                S::of_f64(e.max(LOG_ENERGY_FLOOR).ln())
            })
            .collect();
        let cepstrum = dct2_orthonormal(&log_energies);
        let mut arr = [S::zero(); NUM_BANDS];
        arr.copy_from_slice(&cepstrum);
        out.push(arr);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_are_monotone_and_span_the_range() {
        let edges = bark_band_edges();
        assert_eq!(edges[0], 0.0);
        assert!((edges[NUM_BANDS + 1] - BAND_FMAX).abs() < 1.0);
        for w in edges.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn dct_round_trip() {
        let x: Vec<f64> = (0..NUM_BANDS).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = dct3_orthonormal(&dct2_orthonormal(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_gives_floor_energies() {
        let w: Waveform<f64> = Waveform::new(vec![0.0; 4800]);
        let frames = analyze_bfcc(&w).unwrap();
        assert_eq!(frames.len(), 19);
        // all band energies at the floor => log energies constant => DCT
        // concentrates everything in coefficient 0
        for f in &frames {
            assert_eq!(f, &frames[0]);
            for c in &f[1..] {
                assert!(c.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_tone_energy_lands_in_the_right_band() {
        // independent check: locate 1 kHz with a direct DFT at the bin
        // frequencies, then confirm the band argmax agrees
        let freq = 1000.0;
        let w: Waveform<f64> = Waveform::new(
            (0..24_000)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 24_000.0).sin())
                .collect(),
        );
        let edges = bark_band_edges();
        let expected_band = (0..NUM_BANDS)
            .find(|b| edges[*b + 1] <= freq && freq < edges[*b + 2])
            .or_else(|| (0..NUM_BANDS).find(|b| edges[*b] <= freq && freq < edges[*b + 1]))
            .unwrap();

        let frames = analyze_bfcc(&w).unwrap();
        // recover band energies from the cepstrum of an interior frame
        let log_e = dct3_orthonormal(&frames[5]);
        let argmax = log_e
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            (argmax as i64 - expected_band as i64).abs() <= 1,
            "tone landed in band {argmax}, expected near {expected_band}"
        );
        // interior frames identical up to numerical noise
        for f in &frames[2..frames.len() - 2] {
            for (a, b) in f.iter().zip(frames[5].iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn concatenation_matches_away_from_junction() {
        let tone = |freq: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 24_000.0).sin())
                .collect()
        };
        // keep both pieces hop-aligned so frame boundaries coincide
        let a = tone(440.0, 4800);
        let b = tone(880.0, 4800);
        let mut cat = a.clone();
        cat.extend_from_slice(&b);

        let fa = analyze_bfcc(&Waveform::new(a)).unwrap();
        let fb = analyze_bfcc(&Waveform::new(b)).unwrap();
        let fcat = analyze_bfcc(&Waveform::new(cat)).unwrap();

        // frames fully inside the first piece
        for i in 0..fa.len() - 1 {
            for (x, y) in fcat[i].iter().zip(fa[i].iter()) {
                assert!((x - y).abs() < 1e-9, "frame {i} diverged");
            }
        }
        // frames fully inside the second piece (those starting at or after
        // the junction)
        let junction_frame = 4800 / HOP;
        for i in junction_frame..fcat.len() {
            let j = i - junction_frame;
            if j >= fb.len() {
                break;
            }
            for (x, y) in fcat[i].iter().zip(fb[j].iter()) {
                assert!((x - y).abs() < 1e-9, "frame {i} diverged after junction");
            }
        }
    }

    #[test]
    fn amplitude_scaling_shifts_only_c0() {
        // broadband component keeps every band well above the log floor,
        // where the shift property holds
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(5)
        };
        let w: Vec<f64> = (0..9600)
            .map(|i| {
                use rand::Rng;
                (2.0 * std::f64::consts::PI * 330.0 * i as f64 / 24_000.0).sin() * 0.5
                    + rng.gen_range(-0.05..0.05)
            })
            .collect();
        let scaled: Vec<f64> = w.iter().map(|s| s * 1.7).collect();
        let fa = analyze_bfcc(&Waveform::new(w)).unwrap();
        let fb = analyze_bfcc(&Waveform::new(scaled)).unwrap();
        for (a, b) in fa.iter().zip(fb.iter()) {
            let shift = b[0] - a[0];
            assert!(shift > 0.0);
            for k in 1..NUM_BANDS {
                assert!((a[k] - b[k]).abs() < 1e-6, "coefficient {k} moved");
            }
        }
    }
}
