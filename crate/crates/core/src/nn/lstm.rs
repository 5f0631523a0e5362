//! LSTM recurrences recorded on the tape, including the bidirectional
//! variant used by the duration predictor.

use rand::Rng;

use crate::error::Result;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Gate layout within the fused weight matrices: input, forget, cell,
/// output. The forget-gate bias starts at +1.
pub fn define_lstm<S: Real>(
    store: &mut ParamStore<S>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.define(&format!("{prefix}.w_x"), &[input, 4 * hidden], rng)?;
    store.define(&format!("{prefix}.w_h"), &[hidden, 4 * hidden], rng)?;
    let b = store.define_zeros(&format!("{prefix}.b"), &[4 * hidden])?;
    for i in hidden..2 * hidden {
        store.value_mut(b).data[i] = S::one();
    }
    Ok(())
}

pub fn define_bilstm<S: Real>(
    store: &mut ParamStore<S>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    define_lstm(store, &format!("{prefix}.fwd"), input, hidden, rng)?;
    define_lstm(store, &format!("{prefix}.bwd"), input, hidden, rng)
}

pub fn define_bilstm_stack<S: Real>(
    store: &mut ParamStore<S>,
    prefix: &str,
    input: usize,
    layers: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let mut dim = input;
    for l in 0..layers {
        define_bilstm(store, &format!("{prefix}.l{l}"), dim, hidden, rng)?;
        dim = 2 * hidden;
    }
    Ok(())
}

fn reverse_rows<S: Real>(g: &mut Graph<S>, xs: NodeId) -> Result<NodeId> {
    let t = g.value(xs).rows();
    let rows: Vec<NodeId> = (0..t)
        .rev()
        .map(|r| g.slice_rows(xs, r, r + 1))
        .collect::<Result<_>>()?;
    g.concat_rows(&rows)
}

/// Unidirectional pass over [T,D], returning hidden states [T,H].
pub fn lstm<S: Real>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    xs: NodeId,
    hidden: usize,
) -> Result<NodeId> {
    let w_x = g.param(store, &format!("{prefix}.w_x"))?;
    let w_h = g.param(store, &format!("{prefix}.w_h"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let t = g.value(xs).rows();
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut outputs = Vec::with_capacity(t);
    for step in 0..t {
        let x_t = g.slice_rows(xs, step, step + 1)?;
        let zx = g.matmul(x_t, w_x)?;
        let zh = g.matmul(h, w_h)?;
        let zsum = g.add(zx, zh)?;
        let z = g.add_row(zsum, b)?;
        let zi = g.slice_cols(z, 0, hidden)?;
        let zf = g.slice_cols(z, hidden, 2 * hidden)?;
        let zg = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
        let zo = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
        let i_gate = g.sigmoid(zi);
        let f_gate = g.sigmoid(zf);
        let g_gate = g.tanh(zg);
        let o_gate = g.sigmoid(zo);
        let keep = g.mul(f_gate, c)?;
        let write = g.mul(i_gate, g_gate)?;
        c = g.add(keep, write)?;
        let ct = g.tanh(c);
        h = g.mul(o_gate, ct)?;
        outputs.push(h);
    }
    g.concat_rows(&outputs)
}

/// Bidirectional pass: forward states and reversed-backward states
/// concatenated per step, [T, 2H].
pub fn bilstm<S: Real>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    xs: NodeId,
    hidden: usize,
) -> Result<NodeId> {
    let fwd = lstm(g, store, &format!("{prefix}.fwd"), xs, hidden)?;
    let rev_in = reverse_rows(g, xs)?;
    let bwd_rev = lstm(g, store, &format!("{prefix}.bwd"), rev_in, hidden)?;
    let bwd = reverse_rows(g, bwd_rev)?;
    g.concat_cols(&[fwd, bwd])
}

pub fn bilstm_stack<S: Real>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    prefix: &str,
    xs: NodeId,
    layers: usize,
    hidden: usize,
) -> Result<NodeId> {
    let mut cur = xs;
    for l in 0..layers {
        cur = bilstm(g, store, &format!("{prefix}.l{l}"), cur, hidden)?;
    }
    Ok(cur)
}
