//! Objective evaluation: pitch-track errors, cepstral distortion, and
//! phoneme-duration agreement.

use serde::{Deserialize, Serialize};

use crate::dsp::NUM_BANDS;
use crate::error::{Error, Result};

pub const DUR_ACC_TOLERANCE_FRAMES: u32 = 5;

/// One frame of a pitch track for metric purposes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Frame {
    pub f0_hz: f64,
    pub voiced: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0_corr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vuv_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bfccd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dur_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dur_corr: Option<f64>,
    pub config: MetricsConfig,
}

/// Settings echoed into every report so numbers stay auditable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsConfig {
    pub dur_acc_tolerance_frames: u32,
    pub voicing_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            dur_acc_tolerance_frames: DUR_ACC_TOLERANCE_FRAMES,
            voicing_threshold: crate::dsp::VOICING_THRESHOLD,
        }
    }
}

fn check_len<T, U>(a: &[T], b: &[U]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "track lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// RMSE in Hz over frames voiced in both tracks; `None` when no frame is
/// voiced in both.
pub fn f0_rmse(pred: &[F0Frame], reference: &[F0Frame]) -> Result<Option<f64>> {
    check_len(pred, reference)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, r) in pred.iter().zip(reference) {
        if p.voiced && r.voiced {
            sum += (p.f0_hz - r.f0_hz).powi(2);
            n += 1;
        }
    }
    Ok((n > 0).then(|| (sum / n as f64).sqrt()))
}

/// Pearson correlation of F0 over both-voiced frames.
pub fn f0_corr(pred: &[F0Frame], reference: &[F0Frame]) -> Result<Option<f64>> {
    check_len(pred, reference)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (p, r) in pred.iter().zip(reference) {
        if p.voiced && r.voiced {
            xs.push(p.f0_hz);
            ys.push(r.f0_hz);
        }
    }
    Ok(pearson(&xs, &ys))
}

/// Fraction of frames whose voicing flags disagree.
pub fn vuv_error(pred: &[F0Frame], reference: &[F0Frame]) -> Result<f64> {
    check_len(pred, reference)?;
    if pred.is_empty() {
        return Err(Error::validation("empty pitch tracks"));
    }
    let disagree = pred
        .iter()
        .zip(reference)
        .filter(|(p, r)| p.voiced != r.voiced)
        .count();
    Ok(disagree as f64 / pred.len() as f64)
}

/// Mean cepstral distortion in dB with the energy coefficient excluded.
pub fn bfccd(pred: &[[f64; NUM_BANDS]], reference: &[[f64; NUM_BANDS]]) -> Result<f64> {
    check_len(pred, reference)?;
    if pred.is_empty() {
        return Err(Error::validation("empty feature tracks"));
    }
    let k = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10;
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        let ss: f64 = (1..NUM_BANDS).map(|i| (p[i] - r[i]).powi(2)).sum();
        total += k * ss.sqrt();
    }
    Ok(total / pred.len() as f64)
}

/// Fraction of phonemes whose predicted duration is within the
/// tolerance of the reference.
pub fn dur_acc(pred: &[u32], reference: &[u32], tolerance: u32) -> Result<f64> {
    check_len(pred, reference)?;
    if pred.is_empty() {
        return Err(Error::validation("empty duration lists"));
    }
    let hit = pred
        .iter()
        .zip(reference)
        .filter(|(p, r)| p.abs_diff(**r) <= tolerance)
        .count();
    Ok(hit as f64 / pred.len() as f64)
}

/// Pearson correlation over phoneme durations; `None` on degenerate
/// variance.
pub fn dur_corr(pred: &[u32], reference: &[u32]) -> Result<Option<f64>> {
    check_len(pred, reference)?;
    let xs: Vec<f64> = pred.iter().map(|v| *v as f64).collect();
    let ys: Vec<f64> = reference.iter().map(|v| *v as f64).collect();
    Ok(pearson(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn track(vals: &[(f64, bool)]) -> Vec<F0Frame> {
        vals.iter()
            .map(|(f, v)| F0Frame {
                f0_hz: *f,
                voiced: *v,
            })
            .collect()
    }

    #[test]
    fn f0_rmse_hand_cases() {
        let a = track(&[(200.0, true); 10]);
        let b = track(&[(210.0, true); 10]);
        assert_eq!(f0_rmse(&a, &a).unwrap(), Some(0.0));
        assert!((f0_rmse(&a, &b).unwrap().unwrap() - 10.0).abs() < 1e-12);
        assert!((f0_rmse(&b, &a).unwrap().unwrap() - 10.0).abs() < 1e-12);
        let c = track(&[(200.0, true), (200.0, false)]);
        let d = track(&[(200.0, false), (200.0, true)]);
        assert_eq!(f0_rmse(&c, &d).unwrap(), None);
        assert!(f0_rmse(&c, &a).is_err());
    }

    #[test]
    fn f0_corr_properties() {
        let r: Vec<F0Frame> = (0..20)
            .map(|i| F0Frame {
                f0_hz: 200.0 + i as f64 * 3.0,
                voiced: true,
            })
            .collect();
        let doubled: Vec<F0Frame> = r
            .iter()
            .map(|f| F0Frame {
                f0_hz: 2.0 * f.f0_hz,
                voiced: true,
            })
            .collect();
        let negated: Vec<F0Frame> = r
            .iter()
            .map(|f| F0Frame {
                f0_hz: -f.f0_hz + 500.0,
                voiced: true,
            })
            .collect();
        assert!((f0_corr(&r, &r).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((f0_corr(&doubled, &r).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((f0_corr(&negated, &r).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let flat = track(&[(100.0, true); 5]);
        assert_eq!(f0_corr(&flat, &r[..5].to_vec()).unwrap(), None);
    }

    #[test]
    fn vuv_error_counts_disagreements() {
        let mut a = track(&[(100.0, true); 10]);
        let b = a.clone();
        assert_eq!(vuv_error(&a, &b).unwrap(), 0.0);
        a[3].voiced = false;
        a[7].voiced = false;
        assert!((vuv_error(&a, &b).unwrap() - 0.2).abs() < 1e-12);
        assert!((vuv_error(&b, &a).unwrap() - 0.2).abs() < 1e-12);
        let comp: Vec<F0Frame> = b
            .iter()
            .map(|f| F0Frame {
                voiced: !f.voiced,
                ..*f
            })
            .collect();
        assert_eq!(vuv_error(&comp, &b).unwrap(), 1.0);
    }

    #[test]
    fn bfccd_closed_form_and_symmetry() {
        let zero = [[0.0; NUM_BANDS]];
        assert_eq!(bfccd(&zero, &zero).unwrap(), 0.0);
        let delta = 0.37;
        let mut one = [[0.0; NUM_BANDS]];
        one[0][1] = delta;
        let expect = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10 * delta;
        assert!((bfccd(&one, &zero).unwrap() - expect).abs() < 1e-12);
        assert!((bfccd(&zero, &one).unwrap() - expect).abs() < 1e-12);
        // c0 differences never count
        let mut c0 = [[0.0; NUM_BANDS]];
        c0[0][0] = 100.0;
        assert_eq!(bfccd(&c0, &zero).unwrap(), 0.0);
    }

    #[test]
    fn duration_metrics_hand_cases() {
        let r = [10u32, 20, 30];
        let p = [14u32, 26, 30];
        assert!((dur_acc(&p, &r, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((dur_acc(&r, &p, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dur_acc(&r, &r, 5).unwrap(), 1.0);
        assert!((dur_corr(&r, &r).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let flat = [7u32, 7, 7];
        assert_eq!(dur_corr(&flat, &r).unwrap(), None);
    }

    #[test]
    fn metrics_match_a_brute_force_loop_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let n = rng.gen_range(3..40usize);
            let a: Vec<F0Frame> = (0..n)
                .map(|_| F0Frame {
                    f0_hz: rng.gen_range(80.0..400.0),
                    voiced: rng.gen_bool(0.7),
                })
                .collect();
            let b: Vec<F0Frame> = (0..n)
                .map(|_| F0Frame {
                    f0_hz: rng.gen_range(80.0..400.0),
                    voiced: rng.gen_bool(0.7),
                })
                .collect();
            // independent scalar loop
            let mut se = 0.0;
            let mut cnt = 0;
            let mut dis = 0;
            for i in 0..n {
                if a[i].voiced && b[i].voiced {
                    se += (a[i].f0_hz - b[i].f0_hz) * (a[i].f0_hz - b[i].f0_hz);
                    cnt += 1;
                }
                if a[i].voiced != b[i].voiced {
                    dis += 1;
                }
            }
            let expect_rmse = if cnt > 0 {
                Some((se / cnt as f64).sqrt())
            } else {
                None
            };
            match (f0_rmse(&a, &b).unwrap(), expect_rmse) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
            assert!((vuv_error(&a, &b).unwrap() - dis as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn report_serialization_round_trips() {
        let report = MetricsReport {
            f0_rmse: Some(13.25),
            f0_corr: Some(0.91),
            vuv_error: Some(0.04),
            bfccd: None,
            dur_acc: Some(0.875),
            dur_corr: Some(0.99),
            config: MetricsConfig::default(),
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("dur_acc_tolerance_frames"));
        assert!(json.contains("voicing_threshold"));
        assert!(!json.contains("bfccd"));
    }
}
