//! Bark-cepstrum to linear-prediction conversion: rebuild a smooth power
//! spectrum from the cepstrum, autocorrelate, lag-window, and run
//! Levinson-Durbin to order 16.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::bfcc::dct3_orthonormal;
use super::{
    bark_band_edges, DspScalar, AC_NOISE_FLOOR, FFT_SIZE, LAG_WINDOW_HZ, LPC_ORDER, NUM_BANDS,
    SAMPLE_RATE,
};
use crate::error::{Error, Result};

/// Levinson-Durbin recursion. Returns the prediction coefficients
/// a[1..=order] (so that x[n] ~ sum a[k] x[n-k]) and the reflection
/// coefficients.
pub fn levinson_durbin<S: DspScalar>(r: &[S], order: usize) -> Result<(Vec<S>, Vec<S>)> {
    if r.len() < order + 1 {
        return Err(Error::validation(format!(
            "need {} autocorrelation lags for order {order}",
            order + 1
        )));
    }
    let r: Vec<f64> = r.iter().map(|v| v.to_f64_lossy()).collect();
    if r[0] <= 0.0 {
        return Err(Error::validation("non-positive zero-lag autocorrelation"));
    }
    let mut a = vec![0.0f64; order + 1];
    let mut refl = Vec::with_capacity(order);
    let mut err = r[0];
    for m in 1..=order {
        let mut acc = r[m];
        for k in 1..m {
            acc -= a[k] * r[m - k];
        }
        let k_m = acc / err;
        refl.push(k_m);
        let prev = a.clone();
        a[m] = k_m;
        for k in 1..m {
            a[k] = prev[k] - k_m * prev[m - k];
        }
        err *= 1.0 - k_m * k_m;
        if err <= 0.0 {
            return Err(Error::validation(
                "Levinson-Durbin broke down (non positive-definite autocorrelation)",
            ));
        }
    }
    Ok((
        a[1..].iter().map(|v| S::of_f64(*v)).collect(),
        refl.iter().map(|v| S::of_f64(*v)).collect(),
    ))
}

/// Convert one 24-dim Bark cepstrum to 16 LPC prediction coefficients.
pub fn bfcc_to_lpc<S: DspScalar>(bfcc: &[S]) -> Result<Vec<S>> {
    if bfcc.len() != NUM_BANDS {
        return Err(Error::shape(
            "bfcc_to_lpc",
            format!("expected {NUM_BANDS} coefficients, got {}", bfcc.len()),
        ));
    }
    if bfcc.iter().any(|c| !c.is_finite()) {
        return Err(Error::validation("non-finite cepstral coefficient"));
    }
    let log_energies = dct3_orthonormal(bfcc);
    let energies: Vec<f64> = log_energies
        .iter()
        .map(|e| e.to_f64_lossy().exp())
        .collect();

    // linear interpolation across FFT bins between band centers
    let edges = bark_band_edges();
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    let centers: Vec<f64> = (0..NUM_BANDS).map(|b| edges[b + 1] / bin_hz).collect();
    let half = FFT_SIZE / 2;
    let mut spectrum = vec![0.0f64; half + 1];
    for (k, s) in spectrum.iter_mut().enumerate() {
        let pos = k as f64;
        *s = if pos <= centers[0] {
            energies[0]
        } else if pos >= centers[NUM_BANDS - 1] {
            energies[NUM_BANDS - 1]
        } else {
            let b = (0..NUM_BANDS - 1)
                .find(|b| pos >= centers[*b] && pos < centers[*b + 1])
                .unwrap();
            let t = (pos - centers[b]) / (centers[b + 1] - centers[b]);
            energies[b] + t * (energies[b + 1] - energies[b])
        };
    }

    // symmetric power spectrum -> autocorrelation via inverse FFT
    let inv = FftPlanner::<f64>::new().plan_fft_inverse(FFT_SIZE);
    let mut buf: Vec<Complex<f64>> = (0..FFT_SIZE)
        .map(|k| {
            let k = if k <= half { k } else { FFT_SIZE - k };
            Complex::new(spectrum[k], 0.0)
        })
        .collect();
    inv.process(&mut buf);
    let mut r: Vec<f64> = buf[..=LPC_ORDER]
        .iter()
        .map(|c| c.re / FFT_SIZE as f64)
        .collect();

    // Gaussian lag window (60 Hz bandwidth) plus a relative white-noise
    // floor on the zero lag
    for (m, v) in r.iter_mut().enumerate() {
        let x = 2.0 * std::f64::consts::PI * LAG_WINDOW_HZ * m as f64 / SAMPLE_RATE as f64;
        *v *= (-0.5 * x * x).exp();
    }
    r[0] = r[0] * (1.0 + AC_NOISE_FLOOR) + f64::MIN_POSITIVE;

    let r: Vec<S> = r.iter().map(|v| S::of_f64(*v)).collect();
    let (lpc, _refl) = levinson_durbin(&r, LPC_ORDER)?;
    Ok(lpc)
}

/// LPC synthesis-filter power response |1/A(e^jw)|^2 at `bins` points over
/// 0..Nyquist. Used by tests to compare spectral envelopes.
pub fn lpc_power_spectrum<S: DspScalar>(lpc: &[S], bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|k| {
            let w = std::f64::consts::PI * k as f64 / bins as f64;
            let mut re = 1.0f64;
            let mut im = 0.0f64;
            for (j, a) in lpc.iter().enumerate() {
                let phase = w * (j + 1) as f64;
                re -= a.to_f64_lossy() * phase.cos();
                im += a.to_f64_lossy() * phase.sin();
            }
            1.0 / (re * re + im * im).max(1e-30)
        })
        .collect()
}
