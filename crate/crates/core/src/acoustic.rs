//! Acoustic model: phoneme encoder, duration-driven length regulator,
//! and frame decoder emitting 26-dim features after every block, trained
//! with a progressive pitch-weighted L1 loss and an optional adversarial
//! speaker branch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{FEATURE_DIM, IDX_LOG_F0};
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::real::Real;
use crate::rows::{PhonemeRow, Utterance};
use crate::vocab::{self, PITCH_VOCAB, PTYPE_VOCAB, SLUR_VOCAB};

pub const DEFAULT_GRL_LAMBDA: f64 = 0.02;
pub const DEFAULT_F0_WEIGHT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    /// Decoder FFT blocks, post-net excluded; projections = this + 1.
    pub decoder_blocks: usize,
    pub kernel: usize,
    pub speakers: usize,
    pub grl_lambda: f64,
    pub f0_weight: f64,
}

impl Default for AcousticModelConfig {
    fn default() -> Self {
        AcousticModelConfig {
            model_dim: 32,
            heads: 2,
            encoder_blocks: 2,
            decoder_blocks: 2,
            kernel: 3,
            speakers: 1,
            grl_lambda: DEFAULT_GRL_LAMBDA,
            f0_weight: DEFAULT_F0_WEIGHT,
        }
    }
}

impl AcousticModelConfig {
    fn validate(&self) -> Result<()> {
        if self.model_dim == 0
            || self.heads == 0
            || self.encoder_blocks == 0
            || self.decoder_blocks == 0
            || self.speakers == 0
        {
            return Err(Error::Config("acoustic model dims must be positive".into()));
        }
        if self.model_dim % 4 != 0 {
            return Err(Error::Config(
                "model dim must be divisible by 4 (four concatenated embeddings)".into(),
            ));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(
                "model dim must be divisible by the head count".into(),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("conv kernel size must be odd".into()));
        }
        if self.grl_lambda < 0.0 {
            return Err(Error::Config("grl lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Per-dimension loss weights: ones with the log-F0 dim boosted.
    pub fn loss_weights(&self) -> [f64; FEATURE_DIM] {
        let mut w = [1.0; FEATURE_DIM];
        w[IDX_LOG_F0] = self.f0_weight;
        w
    }
}

pub struct AcousticModel<S: Real> {
    pub config: AcousticModelConfig,
    pub store: ParamStore<S>,
}

fn define_fft_block<S: Real>(
    store: &mut ParamStore<S>,
    prefix: &str,
    dim: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for name in ["wq", "wk", "wv", "wo"] {
        store.define(&format!("{prefix}.{name}"), &[dim, dim], rng)?;
    }
    store.define_zeros(&format!("{prefix}.bo"), &[dim])?;
    define_ln(store, &format!("{prefix}.ln1"), dim)?;
    store.define(&format!("{prefix}.conv1"), &[kernel, dim, 2 * dim], rng)?;
    store.define_zeros(&format!("{prefix}.cb1"), &[2 * dim])?;
    store.define(&format!("{prefix}.conv2"), &[kernel, 2 * dim, dim], rng)?;
    store.define_zeros(&format!("{prefix}.cb2"), &[dim])?;
    define_ln(store, &format!("{prefix}.ln2"), dim)?;
    Ok(())
}

fn define_ln<S: Real>(store: &mut ParamStore<S>, prefix: &str, dim: usize) -> Result<()> {
    let g = store.define_zeros(&format!("{prefix}.gain"), &[dim])?;
    store.value_mut(g).data.iter_mut().for_each(|v| *v = S::one());
    store.define_zeros(&format!("{prefix}.bias"), &[dim])?;
    Ok(())
}

impl<S: Real> AcousticModel<S> {
    pub fn new(config: AcousticModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let e = d / 4;
        store.define("emb.ph", &[vocab::phoneme_vocab_size(), e], &mut rng)?;
        store.define("emb.pt", &[PTYPE_VOCAB, e], &mut rng)?;
        store.define("emb.pi", &[PITCH_VOCAB, e], &mut rng)?;
        store.define("emb.sr", &[SLUR_VOCAB, e], &mut rng)?;
        define_ln(&mut store, "emb.ln", d)?;
        for b in 0..config.encoder_blocks {
            define_fft_block(&mut store, &format!("enc.{b}"), d, config.kernel, &mut rng)?;
        }
        for b in 0..config.decoder_blocks {
            define_fft_block(&mut store, &format!("dec.{b}"), d, config.kernel, &mut rng)?;
            store.define(&format!("dec.{b}.proj"), &[d, FEATURE_DIM], &mut rng)?;
            store.define_zeros(&format!("dec.{b}.pb"), &[FEATURE_DIM])?;
        }
        store.define(
            "postnet.conv1",
            &[config.kernel, FEATURE_DIM, FEATURE_DIM],
            &mut rng,
        )?;
        store.define_zeros("postnet.cb1", &[FEATURE_DIM])?;
        store.define(
            "postnet.conv2",
            &[config.kernel, FEATURE_DIM, FEATURE_DIM],
            &mut rng,
        )?;
        store.define_zeros("postnet.cb2", &[FEATURE_DIM])?;
        store.define("spk.w", &[d, config.speakers], &mut rng)?;
        store.define_zeros("spk.b", &[config.speakers])?;
        Ok(AcousticModel { config, store })
    }

    pub fn encode(&self, g: &mut Graph<S>, rows: &[PhonemeRow]) -> Result<NodeId> {
        encode_with(&self.config, &self.store, g, rows)
    }

    pub fn decode(&self, g: &mut Graph<S>, frame_states: NodeId) -> Result<Vec<NodeId>> {
        decode_with(&self.config, &self.store, g, frame_states)
    }

    /// Frozen encoder states as plain vectors, for probing.
    pub fn encoder_states(&self, rows: &[PhonemeRow]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, rows)?;
        let v = g.value(enc);
        let (t, d) = (v.rows(), v.cols());
        Ok((0..t)
            .map(|r| (0..d).map(|c| v.at(r, c).to_f64_lossy()).collect())
            .collect())
    }

    /// End-to-end synthesis path: encode, expand by durations, decode;
    /// returns the final projection as frame-major 26-dim rows.
    pub fn synthesize(
        &self,
        rows: &[PhonemeRow],
        durations: &[u32],
    ) -> Result<Vec<[f64; FEATURE_DIM]>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, rows)?;
        let frames = length_regulate(&mut g, enc, durations)?;
        let outs = self.decode(&mut g, frames)?;
        let last = g.value(*outs.last().unwrap());
        let t = last.rows();
        let mut result = Vec::with_capacity(t);
        for r in 0..t {
            let mut f = [0.0; FEATURE_DIM];
            for (c, slot) in f.iter_mut().enumerate() {
                *slot = last.at(r, c).to_f64_lossy();
            }
            result.push(f);
        }
        Ok(result)
    }
}

fn sinusoidal_positions<S: Real>(t: usize, d: usize) -> Tensor<S> {
    let mut out = Tensor::zeros(&[t, d]);
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            *out.at_mut(pos, 2 * i) = S::of_f64(angle.sin());
            *out.at_mut(pos, 2 * i + 1) = S::of_f64(angle.cos());
        }
    }
    out
}

fn layer_norm_with<S: Real>(
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let gain = g.param(store, &format!("{prefix}.gain"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias)
}

fn fft_block<S: Real>(
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    prefix: &str,
    heads: usize,
    x: NodeId,
) -> Result<NodeId> {
    let wq = g.param(store, &format!("{prefix}.wq"))?;
    let wk = g.param(store, &format!("{prefix}.wk"))?;
    let wv = g.param(store, &format!("{prefix}.wv"))?;
    let wo = g.param(store, &format!("{prefix}.wo"))?;
    let bo = g.param(store, &format!("{prefix}.bo"))?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let att = g.scaled_dot_attention(q, k, v, heads)?;
    let att = g.matmul(att, wo)?;
    let att = g.add_row(att, bo)?;
    let res1 = g.add(x, att)?;
    let a = layer_norm_with(store, g, &format!("{prefix}.ln1"), res1)?;

    let c1 = g.param(store, &format!("{prefix}.conv1"))?;
    let cb1 = g.param(store, &format!("{prefix}.cb1"))?;
    let c2 = g.param(store, &format!("{prefix}.conv2"))?;
    let cb2 = g.param(store, &format!("{prefix}.cb2"))?;
    let h = g.conv1d(a, c1)?;
    let h = g.add_row(h, cb1)?;
    let h = g.relu(h);
    let h = g.conv1d(h, c2)?;
    let h = g.add_row(h, cb2)?;
    let res2 = g.add(a, h)?;
    layer_norm_with(store, g, &format!("{prefix}.ln2"), res2)
}

/// Encoder forward with an external store (gradient-checker friendly).
pub fn encode_with<S: Real>(
    config: &AcousticModelConfig,
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    rows: &[PhonemeRow],
) -> Result<NodeId> {
    if rows.is_empty() {
        return Err(Error::validation("no rows to encode"));
    }
    for r in rows {
        vocab::phoneme_from_id(r.ph)?;
    }
    let ph_ids: Vec<usize> = rows.iter().map(|r| r.ph as usize).collect();
    let pt_ids: Vec<usize> = rows.iter().map(|r| r.pt.id() as usize).collect();
    let pi_ids: Vec<usize> = rows.iter().map(|r| r.pi.id() as usize).collect();
    let sr_ids: Vec<usize> = rows.iter().map(|r| r.sr.id() as usize).collect();
    let t_ph = g.param(store, "emb.ph")?;
    let t_pt = g.param(store, "emb.pt")?;
    let t_pi = g.param(store, "emb.pi")?;
    let t_sr = g.param(store, "emb.sr")?;
    let e_ph = g.embedding_lookup(t_ph, &ph_ids)?;
    let e_pt = g.embedding_lookup(t_pt, &pt_ids)?;
    let e_pi = g.embedding_lookup(t_pi, &pi_ids)?;
    let e_sr = g.embedding_lookup(t_sr, &sr_ids)?;
    let cat = g.concat_cols(&[e_ph, e_pt, e_pi, e_sr])?;
    let normed = layer_norm_with(store, g, "emb.ln", cat)?;
    let pos = g.constant(sinusoidal_positions(rows.len(), config.model_dim));
    let mut x = g.add(normed, pos)?;
    for b in 0..config.encoder_blocks {
        x = fft_block(store, g, &format!("enc.{b}"), config.heads, x)?;
    }
    Ok(x)
}

/// Repeat state i durations[i] times; output rows = sum of durations.
pub fn length_regulate<S: Real>(
    g: &mut Graph<S>,
    states: NodeId,
    durations: &[u32],
) -> Result<NodeId> {
    let t = g.value(states).rows();
    if durations.len() != t {
        return Err(Error::validation(format!(
            "duration count {} does not match state count {t}",
            durations.len()
        )));
    }
    if durations.iter().all(|d| *d == 0) {
        return Err(Error::validation("all durations are zero"));
    }
    let mut parts = Vec::new();
    for (i, d) in durations.iter().enumerate() {
        if *d == 0 {
            continue;
        }
        let row = g.slice_rows(states, i, i + 1)?;
        for _ in 0..*d {
            parts.push(row);
        }
    }
    g.concat_rows(&parts)
}

/// Decoder forward with an external store: one projected sequence per
/// FFT block plus the post-net output, last entry being the synthesis
/// output.
pub fn decode_with<S: Real>(
    config: &AcousticModelConfig,
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    frame_states: NodeId,
) -> Result<Vec<NodeId>> {
    let t = g.value(frame_states).rows();
    if t == 0 {
        return Err(Error::validation("no frame states to decode"));
    }
    let pos = g.constant(sinusoidal_positions(t, config.model_dim));
    let mut x = g.add(frame_states, pos)?;
    let mut outs = Vec::with_capacity(config.decoder_blocks + 1);
    for b in 0..config.decoder_blocks {
        x = fft_block(store, g, &format!("dec.{b}"), config.heads, x)?;
        let w = g.param(store, &format!("dec.{b}.proj"))?;
        let pb = g.param(store, &format!("dec.{b}.pb"))?;
        let proj = g.matmul(x, w)?;
        outs.push(g.add_row(proj, pb)?);
    }
    // post-net refines the last projection with a residual conv stack
    let base = *outs.last().unwrap();
    let c1 = g.param(store, "postnet.conv1")?;
    let cb1 = g.param(store, "postnet.cb1")?;
    let c2 = g.param(store, "postnet.conv2")?;
    let cb2 = g.param(store, "postnet.cb2")?;
    let h = g.conv1d(base, c1)?;
    let h = g.add_row(h, cb1)?;
    let h = g.tanh(h);
    let h = g.conv1d(h, c2)?;
    let h = g.add_row(h, cb2)?;
    outs.push(g.add(base, h)?);
    Ok(outs)
}

/// Weighted L1 averaged over dims, blocks, and frames (plain numbers).
pub fn progressive_loss_value(
    projections: &[Vec<Vec<f64>>],
    target: &[Vec<f64>],
    w: &[f64],
) -> Result<f64> {
    if projections.is_empty() || target.is_empty() {
        return Err(Error::validation("empty loss inputs"));
    }
    let dim = w.len();
    let t = target.len();
    for p in projections {
        if p.len() != t || p.iter().any(|row| row.len() != dim) {
            return Err(Error::shape("progressive_loss", "projection shape mismatch"));
        }
    }
    if target.iter().any(|row| row.len() != dim) {
        return Err(Error::shape("progressive_loss", "target shape mismatch"));
    }
    let mut total = 0.0;
    for p in projections {
        for (row, tgt) in p.iter().zip(target) {
            for ((x, y), wi) in row.iter().zip(tgt).zip(w) {
                total += wi * (x - y).abs();
            }
        }
    }
    Ok(total / (projections.len() * t * dim) as f64)
}

/// Tape version over decoder projections.
pub fn progressive_loss_graph<S: Real>(
    g: &mut Graph<S>,
    projections: &[NodeId],
    target: NodeId,
    w: &[f64; FEATURE_DIM],
) -> Result<NodeId> {
    if projections.is_empty() {
        return Err(Error::validation("no projections"));
    }
    let t = g.value(target).rows();
    let mut wt = Tensor::zeros(&[t, FEATURE_DIM]);
    for r in 0..t {
        for c in 0..FEATURE_DIM {
            *wt.at_mut(r, c) = S::of_f64(w[c]);
        }
    }
    let wt = g.constant(wt);
    let mut acc: Option<NodeId> = None;
    for p in projections {
        if g.value(*p).shape != g.value(target).shape {
            return Err(Error::shape(
                "progressive_loss",
                format!(
                    "projection {:?} vs target {:?}",
                    g.value(*p).shape,
                    g.value(target).shape
                ),
            ));
        }
        let diff = g.sub(*p, target)?;
        let a = g.abs(diff);
        let weighted = g.mul(a, wt)?;
        let m = g.mean_all(weighted);
        acc = Some(match acc {
            None => m,
            Some(prev) => g.add(prev, m)?,
        });
    }
    Ok(g.scale(acc.unwrap(), 1.0 / projections.len() as f64))
}

/// Adversarial speaker loss: gradient-reversed mean-pooled encoder
/// states through a linear classifier. Zero (and gradient-free) for a
/// single-speaker model.
pub fn dat_loss_graph<S: Real>(
    config: &AcousticModelConfig,
    store: &ParamStore<S>,
    g: &mut Graph<S>,
    encoder_states: NodeId,
    speaker_id: usize,
) -> Result<Option<NodeId>> {
    if speaker_id >= config.speakers {
        return Err(Error::validation(format!(
            "speaker id {speaker_id} out of range for {} speakers",
            config.speakers
        )));
    }
    if config.speakers == 1 {
        return Ok(None);
    }
    let rev = g.gradient_reverse(encoder_states, config.grl_lambda)?;
    let t = g.value(rev).rows();
    let pool = g.constant(Tensor::from_vec(
        &[1, t],
        vec![S::of_f64(1.0 / t as f64); t],
    )?);
    let pooled = g.matmul(pool, rev)?;
    let w = g.param(store, "spk.w")?;
    let b = g.param(store, "spk.b")?;
    let logits = g.matmul(pooled, w)?;
    let logits = g.add_row(logits, b)?;
    Ok(Some(g.softmax_cross_entropy(logits, speaker_id)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    PretrainMultiSinger,
    FinetuneSingle,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AcousticEpochLog {
    pub epoch: usize,
    pub progressive_loss: f64,
    pub dat_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AcousticTrainReport {
    pub recipe: Recipe,
    pub epochs: Vec<AcousticEpochLog>,
    pub val_progressive_loss: f64,
}

/// One training pair: rows with ground-truth durations plus the aligned
/// normalized feature target.
#[derive(Debug, Clone)]
pub struct AcousticExample {
    pub utterance: Utterance,
    pub target: Vec<[f64; FEATURE_DIM]>,
}

impl AcousticExample {
    fn gt_durations(&self) -> Result<Vec<u32>> {
        self.utterance
            .rows
            .iter()
            .map(|r| {
                r.gt_dur
                    .ok_or_else(|| Error::validation("row without ground-truth duration"))
            })
            .collect()
    }
}

fn speaker_index(corpus: &[AcousticExample]) -> Result<Vec<String>> {
    let mut names: Vec<String> = corpus
        .iter()
        .filter_map(|e| e.utterance.singer_id.clone())
        .collect();
    names.sort();
    names.dedup();
    Ok(names)
}

fn target_tensor<S: Real>(target: &[[f64; FEATURE_DIM]]) -> Tensor<S> {
    let mut t = Tensor::zeros(&[target.len(), FEATURE_DIM]);
    for (r, row) in target.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            *t.at_mut(r, c) = S::of_f64(*v);
        }
    }
    t
}

pub fn train_acoustic<S: Real>(
    model: &mut AcousticModel<S>,
    corpus: &[AcousticExample],
    recipe: Recipe,
    init_checkpoint: Option<&Path>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<AcousticTrainReport> {
    if corpus.is_empty() {
        return Err(Error::validation("empty training corpus"));
    }
    match recipe {
        Recipe::FinetuneSingle => {
            let path = init_checkpoint.ok_or_else(|| {
                Error::validation("finetune recipe requires an initial checkpoint")
            })?;
            model.store.load(path)?;
        }
        Recipe::PretrainMultiSinger => {
            if let Some(path) = init_checkpoint {
                model.store.load(path)?;
            }
        }
    }
    let dat_enabled = matches!(recipe, Recipe::PretrainMultiSinger) && model.config.speakers > 1;
    let speakers = speaker_index(corpus)?;
    if dat_enabled && speakers.len() > model.config.speakers {
        return Err(Error::validation(format!(
            "corpus has {} singers, model supports {}",
            speakers.len(),
            model.config.speakers
        )));
    }
    for ex in corpus {
        let durs = ex.gt_durations()?;
        let total: u32 = durs.iter().sum();
        if total as usize != ex.target.len() {
            return Err(Error::Alignment(format!(
                "{}: durations sum to {total} frames but target has {}",
                ex.utterance.utterance_id,
                ex.target.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = if corpus.len() == 1 {
        (vec![0usize], vec![0usize])
    } else {
        let n_val = (corpus.len() / 5).max(1);
        (order[..n_val].to_vec(), order[n_val..].to_vec())
    };
    let weights = model.config.loss_weights();

    let mut report = AcousticTrainReport {
        recipe,
        epochs: Vec::with_capacity(epochs),
        val_progressive_loss: 0.0,
    };
    let mut train_order = train_idx.clone();
    for epoch in 1..=epochs {
        train_order.shuffle(&mut rng);
        let mut prog_total = 0.0;
        let mut dat_total = 0.0;
        let mut dat_n = 0usize;
        for &i in &train_order {
            let ex = &corpus[i];
            let durs = ex.gt_durations()?;
            model.store.zero_grads();
            let mut g = Graph::new();
            let enc = model.encode(&mut g, &ex.utterance.rows)?;
            let frames = length_regulate(&mut g, enc, &durs)?;
            let outs = model.decode(&mut g, frames)?;
            let target = g.constant(target_tensor(&ex.target));
            let prog = progressive_loss_graph(&mut g, &outs, target, &weights)?;
            prog_total += g.value(prog).scalar_value().to_f64_lossy();
            let loss = if dat_enabled {
                let sid = ex
                    .utterance
                    .singer_id
                    .as_ref()
                    .and_then(|n| speakers.iter().position(|s| s == n))
                    .unwrap_or(0);
                match dat_loss_graph(&model.config, &model.store, &mut g, enc, sid)? {
                    Some(dl) => {
                        dat_total += g.value(dl).scalar_value().to_f64_lossy();
                        dat_n += 1;
                        g.add(prog, dl)?
                    }
                    None => prog,
                }
            } else {
                prog
            };
            g.backward(loss)?;
            g.apply_grads(&mut model.store);
            model.store.adam_step(lr);
        }
        report.epochs.push(AcousticEpochLog {
            epoch,
            progressive_loss: prog_total / train_order.len() as f64,
            dat_loss: (dat_n > 0).then(|| dat_total / dat_n as f64),
        });
    }

    let mut val_total = 0.0;
    for &i in &val_idx {
        let ex = &corpus[i];
        let durs = ex.gt_durations()?;
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &ex.utterance.rows)?;
        let frames = length_regulate(&mut g, enc, &durs)?;
        let outs = model.decode(&mut g, frames)?;
        let target = g.constant(target_tensor(&ex.target));
        let prog = progressive_loss_graph(&mut g, &outs, target, &weights)?;
        val_total += g.value(prog).scalar_value().to_f64_lossy();
    }
    report.val_progressive_loss = val_total / val_idx.len() as f64;
    Ok(report)
}
