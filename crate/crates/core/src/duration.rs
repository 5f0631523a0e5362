//! Recurrent phoneme-duration predictor: embedded row inputs through a
//! stacked bidirectional LSTM to one log-duration per row, trained with
//! a rhythm loss that penalizes both per-phoneme and per-syllable error,
//! plus the note-locked integer post-processing.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::lstm;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::real::Real;
use crate::rows::{syllable_ranges, PhonemeRow, Utterance};
use crate::vocab::{self, PITCH_VOCAB, PTYPE_VOCAB, SLUR_VOCAB};

/// Consonant onset cap applied during post-processing, in 10 ms frames.
pub const INITIAL_CAP_FRAMES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationModelConfig {
    pub embed_dim: usize,
    pub bt_dim: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for DurationModelConfig {
    fn default() -> Self {
        DurationModelConfig {
            embed_dim: 32,
            bt_dim: 8,
            layers: 2,
            hidden: 64,
        }
    }
}

impl DurationModelConfig {
    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.bt_dim == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("duration model dims must be positive".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        4 * self.embed_dim + self.bt_dim
    }
}

pub struct DurationModel<S: Real> {
    pub config: DurationModelConfig,
    pub store: ParamStore<S>,
}

impl<S: Real> DurationModel<S> {
    pub fn new(config: DurationModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        store.define("emb.ph", &[vocab::phoneme_vocab_size(), e], &mut rng)?;
        store.define("emb.pt", &[PTYPE_VOCAB, e], &mut rng)?;
        store.define("emb.pi", &[PITCH_VOCAB, e], &mut rng)?;
        store.define("emb.sr", &[SLUR_VOCAB, e], &mut rng)?;
        store.define("bt.w", &[1, config.bt_dim], &mut rng)?;
        store.define_zeros("bt.b", &[config.bt_dim])?;
        let in_dim = config.input_dim();
        let gain = store.define_zeros("ln.gain", &[in_dim])?;
        store
            .value_mut(gain)
            .data
            .iter_mut()
            .for_each(|v| *v = S::one());
        store.define_zeros("ln.bias", &[in_dim])?;
        lstm::define_bilstm_stack(
            &mut store,
            "blstm",
            in_dim,
            config.layers,
            config.hidden,
            &mut rng,
        )?;
        store.define("out.w", &[2 * config.hidden, 1], &mut rng)?;
        store.define_zeros("out.b", &[1])?;
        Ok(DurationModel { config, store })
    }

    /// Forward pass on an existing tape: [T,1] log-durations (log frames).
    pub fn forward(&self, g: &mut Graph<S>, rows: &[PhonemeRow]) -> Result<NodeId> {
        forward_with(&self.config, &self.store, g, rows)
    }

    /// One log-duration (log frames) per row, without gradients.
    pub fn predict_log_durations(&self, rows: &[PhonemeRow]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, rows)?;
        Ok(g.value(out).data.iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Linear-domain frame predictions.
    pub fn predict_frames(&self, rows: &[PhonemeRow]) -> Result<Vec<f64>> {
        Ok(self
            .predict_log_durations(rows)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }
}

/// Forward pass with an external parameter store, as needed when the
/// store is borrowed by a gradient checker.
pub fn forward_with<S: Real>(
    config: &DurationModelConfig,
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    rows: &[PhonemeRow],
) -> Result<NodeId> {
    {
        if rows.is_empty() {
            return Err(Error::validation("no rows to predict"));
        }
        let ph_ids: Vec<usize> = rows.iter().map(|r| r.ph as usize).collect();
        let pt_ids: Vec<usize> = rows.iter().map(|r| r.pt.id() as usize).collect();
        let pi_ids: Vec<usize> = rows.iter().map(|r| r.pi.id() as usize).collect();
        let sr_ids: Vec<usize> = rows.iter().map(|r| r.sr.id() as usize).collect();
        for r in rows {
            vocab::phoneme_from_id(r.ph)?;
        }
        let t_ph = g.param(store, "emb.ph")?;
        let t_pt = g.param(store, "emb.pt")?;
        let t_pi = g.param(store, "emb.pi")?;
        let t_sr = g.param(store, "emb.sr")?;
        let e_ph = g.embedding_lookup(t_ph, &ph_ids)?;
        let e_pt = g.embedding_lookup(t_pt, &pt_ids)?;
        let e_pi = g.embedding_lookup(t_pi, &pi_ids)?;
        let e_sr = g.embedding_lookup(t_sr, &sr_ids)?;

        // note-beat frames enter in log scale, matching the target domain
        let bt_vals: Vec<S> = rows
            .iter()
            .map(|r| S::of_f64((1.0 + r.bt as f64).ln()))
            .collect();
        let bt_in = g.input(Tensor::from_vec(&[rows.len(), 1], bt_vals)?);
        let bt_w = g.param(store, "bt.w")?;
        let bt_b = g.param(store, "bt.b")?;
        let bt_proj = g.matmul(bt_in, bt_w)?;
        let bt_proj = g.add_row(bt_proj, bt_b)?;

        let cat = g.concat_cols(&[e_ph, e_pt, e_pi, e_sr, bt_proj])?;
        let gain = g.param(store, "ln.gain")?;
        let bias = g.param(store, "ln.bias")?;
        let normed = g.layer_norm(cat, gain, bias)?;
        let states = lstm::bilstm_stack(
            g,
            store,
            "blstm",
            normed,
            config.layers,
            config.hidden,
        )?;
        let w = g.param(store, "out.w")?;
        let b = g.param(store, "out.b")?;
        let proj = g.matmul(states, w)?;
        g.add_row(proj, b)
    }
}

fn check_syllables(n: usize, syllables: &[Range<usize>]) -> Result<()> {
    let mut covered = 0usize;
    for s in syllables {
        if s.is_empty() {
            return Err(Error::validation(format!("empty syllable group {s:?}")));
        }
        if s.start != covered {
            return Err(Error::validation(format!(
                "syllable groups must be contiguous, got {s:?} after {covered} rows"
            )));
        }
        covered = s.end;
    }
    if covered != n {
        return Err(Error::validation(format!(
            "syllable groups cover {covered} of {n} rows"
        )));
    }
    Ok(())
}

/// Rhythm loss over linear-domain frame counts:
/// mean squared per-syllable sum error plus mean squared per-row error.
pub fn multiscale_loss(pred: &[f64], gt: &[f64], syllables: &[Range<usize>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::validation(format!(
            "prediction/target lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    check_syllables(pred.len(), syllables)?;
    let term1: f64 = syllables
        .iter()
        .map(|s| {
            let sum: f64 = s.clone().map(|i| gt[i] - pred[i]).sum();
            sum * sum
        })
        .sum::<f64>()
        / syllables.len() as f64;
    let term2: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (g - p) * (g - p))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(term1 + term2)
}

/// Tape version of [`multiscale_loss`] taking log-domain predictions;
/// the exponentiation to linear frames happens inside.
pub fn multiscale_loss_graph<S: Real>(
    g: &mut Graph<S>,
    pred_log: NodeId,
    gt_frames: &[f64],
    syllables: &[Range<usize>],
    use_syllable_term: bool,
) -> Result<NodeId> {
    let t = g.value(pred_log).rows();
    if t != gt_frames.len() {
        return Err(Error::validation(format!(
            "prediction/target lengths differ: {t} vs {}",
            gt_frames.len()
        )));
    }
    check_syllables(t, syllables)?;
    let gt: Vec<S> = gt_frames.iter().map(|v| S::of_f64(*v)).collect();
    let gt = g.input(Tensor::from_vec(&[t, 1], gt)?);
    let pred_lin = g.exp(pred_log);
    let diff = g.sub(gt, pred_lin)?;
    let sq = g.mul(diff, diff)?;
    let term2 = g.mean_all(sq);
    if !use_syllable_term {
        return Ok(term2);
    }
    let mut term1: Option<NodeId> = None;
    for s in syllables {
        let part = g.slice_rows(diff, s.start, s.end)?;
        let sum = g.sum_all(part);
        let sumsq = g.mul(sum, sum)?;
        term1 = Some(match term1 {
            None => sumsq,
            Some(acc) => g.add(acc, sumsq)?,
        });
    }
    let term1 = g.scale(term1.unwrap(), 1.0 / syllables.len() as f64);
    g.add(term1, term2)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DurationTrainReport {
    pub epochs: Vec<EpochLog>,
    pub dur_acc: Option<f64>,
    pub dur_corr: Option<f64>,
    pub val_syllable_abs_error: f64,
}

fn gt_vec(rows: &[PhonemeRow]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r.gt_dur
                .map(|v| v as f64)
                .ok_or_else(|| Error::validation("row without ground-truth duration"))
        })
        .collect()
}

pub fn train_duration<S: Real>(
    model: &mut DurationModel<S>,
    corpus: &[Utterance],
    epochs: usize,
    lr: f64,
    seed: u64,
    use_syllable_term: bool,
) -> Result<DurationTrainReport> {
    if corpus.is_empty() {
        return Err(Error::validation("empty training corpus"));
    }
    for u in corpus {
        gt_vec(&u.rows)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (corpus.len() / 5).max(1).min(corpus.len() - 1).max(
        // single-utterance corpora validate on the training item
        usize::from(corpus.len() == 1),
    );
    let (val_idx, train_idx) = if corpus.len() == 1 {
        (vec![0usize], vec![0usize])
    } else {
        let v = order[..n_val].to_vec();
        let t = order[n_val..].to_vec();
        (v, t)
    };

    let mut report = DurationTrainReport {
        epochs: Vec::with_capacity(epochs),
        dur_acc: None,
        dur_corr: None,
        val_syllable_abs_error: 0.0,
    };
    let mut train_order = train_idx.clone();
    for epoch in 1..=epochs {
        train_order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &train_order {
            let utt = &corpus[i];
            let gt = gt_vec(&utt.rows)?;
            let ranges = syllable_ranges(&utt.rows);
            model.store.zero_grads();
            let mut g = Graph::new();
            let pred = model.forward(&mut g, &utt.rows)?;
            let loss = multiscale_loss_graph(&mut g, pred, &gt, &ranges, use_syllable_term)?;
            total += g.value(loss).scalar_value().to_f64_lossy();
            g.backward(loss)?;
            g.apply_grads(&mut model.store);
            model.store.adam_step(lr);
        }
        report.epochs.push(EpochLog {
            epoch,
            loss: total / train_order.len() as f64,
        });
    }

    // held-out duration metrics on post-processed integer predictions
    let mut all_pred: Vec<u32> = Vec::new();
    let mut all_gt: Vec<u32> = Vec::new();
    let mut syl_err = 0.0;
    let mut syl_n = 0usize;
    for &i in &val_idx {
        let utt = &corpus[i];
        let pred = model.predict_frames(&utt.rows)?;
        let processed = postprocess(&pred, &utt.rows)?;
        for (row, p) in utt.rows.iter().zip(&processed) {
            all_pred.push(*p);
            all_gt.push(row.gt_dur.unwrap());
        }
        for s in syllable_ranges(&utt.rows) {
            let ps: f64 = s.clone().map(|j| pred[j]).sum();
            let gs: f64 = s.clone().map(|j| utt.rows[j].gt_dur.unwrap() as f64).sum();
            syl_err += (ps - gs).abs();
            syl_n += 1;
        }
    }
    report.dur_acc = Some(metrics::dur_acc(
        &all_pred,
        &all_gt,
        metrics::DUR_ACC_TOLERANCE_FRAMES,
    )?);
    report.dur_corr = metrics::dur_corr(&all_pred, &all_gt)?;
    report.val_syllable_abs_error = syl_err / syl_n as f64;
    Ok(report)
}

/// Largest-remainder rounding of non-negative reals to integers with an
/// exact target sum.
fn apportion(values: &[f64], total: u32) -> Vec<u32> {
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return vec![0; values.len()];
    }
    let scaled: Vec<f64> = values
        .iter()
        .map(|v| v / sum * total as f64)
        .collect();
    let mut out: Vec<u32> = scaled.iter().map(|v| v.floor() as u32).collect();
    let assigned: u32 = out.iter().sum();
    let mut rema: Vec<(usize, f64)> = scaled
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v - v.floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(total - assigned) as usize {
        out[rema[k % rema.len()].0] += 1;
    }
    out
}

/// Note-frame total of one syllable: the first note's frames plus one
/// entry per melisma continuation row.
fn syllable_note_total(rows: &[PhonemeRow]) -> u32 {
    use crate::vocab::Slur;
    let mut total = rows[0].bt;
    for r in rows {
        if matches!(r.sr, Slur::Continue | Slur::Stop) {
            total += r.bt;
        }
    }
    total
}

/// Lock predicted durations to the score: scale each syllable to its
/// note-frame total with exact integer sums, then cap the consonant at
/// 10 frames and hand the excess to the vowel rows proportionally.
pub fn postprocess(pred_frames: &[f64], rows: &[PhonemeRow]) -> Result<Vec<u32>> {
    if pred_frames.len() != rows.len() {
        return Err(Error::validation(format!(
            "prediction/row lengths differ: {} vs {}",
            pred_frames.len(),
            rows.len()
        )));
    }
    let mut out = vec![0u32; rows.len()];
    for range in syllable_ranges(rows) {
        let syl = &rows[range.clone()];
        if syl[0].is_silence() {
            for i in range {
                out[i] = pred_frames[i].round().max(1.0) as u32;
            }
            continue;
        }
        let preds: Vec<f64> = range.clone().map(|i| pred_frames[i]).collect();
        let psum: f64 = preds.iter().sum();
        if psum <= 0.0 {
            return Err(Error::validation(format!(
                "non-positive predicted duration sum in syllable {}",
                syl[0].syllable_index
            )));
        }
        let d = syllable_note_total(syl);
        let mut scaled = apportion(&preds, d);

        let initial_pos = syl
            .iter()
            .position(|r| r.pt == crate::vocab::PhonemeType::Initial);
        if let Some(ip) = initial_pos {
            if scaled[ip] > INITIAL_CAP_FRAMES {
                let excess = scaled[ip] - INITIAL_CAP_FRAMES;
                scaled[ip] = INITIAL_CAP_FRAMES;
                let finals: Vec<usize> = (0..syl.len()).filter(|j| *j != ip).collect();
                let weights: Vec<f64> = finals.iter().map(|j| scaled[*j].max(1) as f64).collect();
                let extra = apportion(&weights, excess);
                for (j, add) in finals.iter().zip(&extra) {
                    scaled[*j] += *add;
                }
            }
        }
        for (j, i) in range.enumerate() {
            out[i] = scaled[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::score::NotePitch;
    use crate::vocab::{PhonemeType, Slur};

    fn toy_config() -> DurationModelConfig {
        DurationModelConfig {
            embed_dim: 4,
            bt_dim: 2,
            layers: 1,
            hidden: 5,
        }
    }

    fn row(ph: u16, pt: PhonemeType, bt: u32, gt: u32, syl: u32) -> PhonemeRow {
        PhonemeRow {
            ph,
            pt,
            pi: NotePitch { midi: 60, rest: false },
            sr: Slur::Null,
            bt,
            nominal_dur: bt,
            gt_dur: Some(gt),
            syllable_index: syl,
        }
    }

    fn toy_rows() -> Vec<PhonemeRow> {
        vec![
            row(1, PhonemeType::Initial, 40, 8, 0),
            row(25, PhonemeType::Final, 40, 32, 0),
            row(2, PhonemeType::Initial, 30, 12, 1),
            row(30, PhonemeType::Final, 30, 18, 1),
        ]
    }

    #[test]
    fn prediction_length_matches_row_count() {
        let model: DurationModel<f64> = DurationModel::new(toy_config(), 1).unwrap();
        let rows = toy_rows();
        assert_eq!(model.predict_log_durations(&rows).unwrap().len(), 4);
        assert_eq!(model.predict_log_durations(&rows[..1]).unwrap().len(), 1);
    }

    #[test]
    fn zeroed_output_projection_predicts_the_bias() {
        let mut model: DurationModel<f64> = DurationModel::new(toy_config(), 1).unwrap();
        let w = model.store.index_of("out.w").unwrap();
        model.store.value_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        let b = model.store.index_of("out.b").unwrap();
        model.store.value_mut(b).data[0] = 2.5;
        for p in model.predict_log_durations(&toy_rows()).unwrap() {
            assert!((p - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_hand_examples() {
        // one syllable, perfect split of the sum
        let l = multiscale_loss(&[12.0, 18.0], &[10.0, 20.0], &[0..2]).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        // one syllable, sum off by 4
        let l = multiscale_loss(&[12.0, 22.0], &[10.0, 20.0], &[0..2]).unwrap();
        assert!((l - 20.0).abs() < 1e-12);
        // zero error
        let l = multiscale_loss(&[10.0, 20.0], &[10.0, 20.0], &[0..2]).unwrap();
        assert_eq!(l, 0.0);
        // empty group rejected
        assert!(multiscale_loss(&[1.0], &[1.0], &[0..0, 0..1]).is_err());
    }

    #[test]
    fn syllable_term_is_redistribution_invariant_and_loss_dominates_term2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let gt: Vec<f64> = (0..6).map(|_| rng.gen_range(5.0..40.0)).collect();
            let pred: Vec<f64> = (0..6).map(|_| rng.gen_range(5.0..40.0)).collect();
            let syl = vec![0..3, 3..6];
            let loss = multiscale_loss(&pred, &gt, &syl).unwrap();
            let term2: f64 =
                pred.iter().zip(&gt).map(|(p, g)| (g - p) * (g - p)).sum::<f64>() / 6.0;
            assert!(loss >= term2 - 1e-12);

            // shift mass within syllable 0, preserving its sum
            let mut moved = pred.clone();
            moved[0] += 3.0;
            moved[2] -= 3.0;
            let loss_moved = multiscale_loss(&moved, &gt, &syl).unwrap();
            let term2_moved: f64 =
                moved.iter().zip(&gt).map(|(p, g)| (g - p) * (g - p)).sum::<f64>() / 6.0;
            assert!((loss - term2 - (loss_moved - term2_moved)).abs() < 1e-9);
            assert!((term2 - term2_moved).abs() > 1e-9);
        }
    }

    #[test]
    fn equality_with_term2_iff_syllable_sums_match() {
        let gt = [10.0, 20.0, 15.0];
        let pred = [12.0, 18.0, 15.0];
        let syl = vec![0..2, 2..3];
        let loss = multiscale_loss(&pred, &gt, &syl).unwrap();
        let term2: f64 =
            pred.iter().zip(&gt).map(|(p, g)| (g - p) * (g - p)).sum::<f64>() / 3.0;
        assert!((loss - term2).abs() < 1e-12);
        let pred2 = [12.0, 19.0, 15.0];
        let loss2 = multiscale_loss(&pred2, &gt, &syl).unwrap();
        let term2b: f64 =
            pred2.iter().zip(&gt).map(|(p, g)| (g - p) * (g - p)).sum::<f64>() / 3.0;
        assert!(loss2 > term2b);
    }

    #[test]
    fn loss_gradient_through_the_model_passes_finite_differences() {
        // small durations keep the loss curvature low enough for the
        // central-difference oracle
        let rows = vec![
            row(1, PhonemeType::Initial, 5, 2, 0),
            row(25, PhonemeType::Final, 5, 3, 0),
            row(2, PhonemeType::Initial, 4, 1, 1),
            row(30, PhonemeType::Final, 4, 3, 1),
        ];
        let gt: Vec<f64> = rows.iter().map(|r| r.gt_dur.unwrap() as f64).collect();
        let ranges = syllable_ranges(&rows);
        let model: DurationModel<f64> = DurationModel::new(toy_config(), 7).unwrap();
        let config = model.config.clone();
        let mut store = model.store;
        let err = grad_check(&mut store, |s, g| {
            let pred = forward_with(&config, s, g, &rows)?;
            multiscale_loss_graph(g, pred, &gt, &ranges, true)
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn postprocess_hand_examples() {
        // D=100, pred (30,90): scale to (25,75), cap initial, excess to final
        let rows = vec![
            row(1, PhonemeType::Initial, 100, 0, 0),
            row(25, PhonemeType::Final, 100, 0, 0),
        ];
        let out = postprocess(&[30.0, 90.0], &rows).unwrap();
        assert_eq!(out, vec![10, 90]);

        // already consistent predictions are a fixed point
        let out = postprocess(&[8.0, 92.0], &rows).unwrap();
        assert_eq!(out, vec![8, 92]);

        // single-final syllable: pure scaling, no cap
        let single = vec![row(30, PhonemeType::SingleFinal, 40, 0, 0)];
        let out = postprocess(&[55.0], &single).unwrap();
        assert_eq!(out, vec![40]);

        // zero predictions rejected
        assert!(postprocess(&[0.0, 0.0], &rows).is_err());
    }

    #[test]
    fn postprocess_sums_lock_to_note_totals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut rows = Vec::new();
            let mut preds = Vec::new();
            for s in 0..4u32 {
                let d = rng.gen_range(12..120u32);
                rows.push(PhonemeRow {
                    sr: Slur::Null,
                    ..row(1, PhonemeType::Initial, d, 0, s)
                });
                preds.push(rng.gen_range(1.0..60.0));
                rows.push(PhonemeRow {
                    sr: Slur::Start,
                    ..row(25, PhonemeType::Final, d, 0, s)
                });
                preds.push(rng.gen_range(1.0..60.0));
                let d2 = rng.gen_range(5..50u32);
                rows.push(PhonemeRow {
                    sr: Slur::Stop,
                    ..row(25, PhonemeType::Final, d2, 0, s)
                });
                preds.push(rng.gen_range(1.0..60.0));
            }
            let out = postprocess(&preds, &rows).unwrap();
            for s in syllable_ranges(&rows) {
                let total: u32 = s.clone().map(|i| out[i]).sum();
                let expect = syllable_note_total(&rows[s.clone()]);
                assert_eq!(total, expect);
                for i in s {
                    if rows[i].pt == PhonemeType::Initial {
                        assert!(out[i] <= INITIAL_CAP_FRAMES);
                    }
                }
            }
        }
    }

    fn toy_corpus(n: usize, seed: u64) -> Vec<Utterance> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut rows = Vec::new();
                for s in 0..5u32 {
                    let d = rng.gen_range(20..80u32);
                    let init = rng.gen_range(4..12u32).min(d - 1);
                    let ph_i = rng.gen_range(1..21u16);
                    let ph_f = rng.gen_range(22..50u16);
                    // ground truth sums to the note total, split noisily
                    rows.push(row(ph_i, PhonemeType::Initial, d, init, s));
                    rows.push(row(ph_f, PhonemeType::Final, d, d - init, s));
                }
                Utterance {
                    utterance_id: format!("u{i}"),
                    singer_id: None,
                    rows,
                    span: None,
                }
            })
            .collect()
    }

    #[test]
    fn training_descends_and_zero_lr_is_inert() {
        let corpus = toy_corpus(20, 11);
        let mut model: DurationModel<f64> = DurationModel::new(toy_config(), 5).unwrap();
        let report = train_duration(&mut model, &corpus, 2, 0.02, 1, true).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(
            report.epochs[1].loss < report.epochs[0].loss,
            "{:?}",
            report.epochs
        );

        let mut frozen: DurationModel<f64> = DurationModel::new(toy_config(), 5).unwrap();
        let before = frozen.store.value(0).clone();
        let report = train_duration(&mut frozen, &corpus, 2, 0.0, 1, true).unwrap();
        assert_eq!(frozen.store.value(0), &before);
        assert!((report.epochs[0].loss - report.epochs[1].loss).abs() < 1e-9);
    }

    #[test]
    fn syllable_term_improves_syllable_sum_error() {
        let corpus = toy_corpus(20, 3);
        let mut with: DurationModel<f64> = DurationModel::new(toy_config(), 5).unwrap();
        let r_with = train_duration(&mut with, &corpus, 40, 0.01, 1, true).unwrap();
        let mut without: DurationModel<f64> = DurationModel::new(toy_config(), 5).unwrap();
        let r_without = train_duration(&mut without, &corpus, 40, 0.01, 1, false).unwrap();
        assert!(
            r_with.val_syllable_abs_error < r_without.val_syllable_abs_error,
            "with {} vs without {}",
            r_with.val_syllable_abs_error,
            r_without.val_syllable_abs_error
        );
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let mut model: DurationModel<f64> = DurationModel::new(toy_config(), 5).unwrap();
        assert!(train_duration(&mut model, &[], 1, 0.1, 1, true).is_err());
    }
}
