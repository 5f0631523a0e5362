//! Dense-tensor reverse-mode engine: tape graph, parameter store with
//! Adam and checkpointing, LSTM recurrences, gradient verification.

pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff, grad_check, max_rel_err};
pub use graph::{Graph, NodeId, LAYER_NORM_EPS};
pub use params::ParamStore;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Result;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn layer_norm_of_constant_rows_equals_bias() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(&[2, 4], vec![3.0; 8]).unwrap());
        let gain = g.input(Tensor::from_vec(&[4], vec![2.0, 1.0, 0.5, 3.0]).unwrap());
        let bias = g.input(Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = g.layer_norm(x, gain, bias).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                let expect = [0.1, 0.2, 0.3, 0.4][c];
                assert!((g.value(y).at(r, c) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        for k in [2usize, 5, 11] {
            let mut g: Graph<f64> = Graph::new();
            let logits = g.input(Tensor::from_vec(&[k], vec![0.7; k]).unwrap());
            let loss = g.softmax_cross_entropy(logits, k / 2).unwrap();
            assert!((g.value(loss).scalar_value() - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, k, n) = (3, 4, 2);
        let a0 = rand_tensor(&mut rng, &[m, k]);
        let b0 = rand_tensor(&mut rng, &[k, n]);
        let eval = |adata: &[f64], bdata: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let mut g: Graph<f64> = Graph::new();
            let a = g.input(Tensor::from_vec(&[m, k], adata.to_vec()).unwrap());
            let b = g.input(Tensor::from_vec(&[k, n], bdata.to_vec()).unwrap());
            let c = g.matmul(a, b).unwrap();
            let sq = g.mul(c, c).unwrap();
            let loss = g.sum_all(sq);
            g.backward(loss).unwrap();
            (
                g.value(loss).scalar_value(),
                g.grad(a).data.clone(),
                g.grad(b).data.clone(),
            )
        };
        let (_, ga, gb) = eval(&a0.data, &b0.data);
        let fa = finite_diff(&a0.data, |x| eval(x, &b0.data).0);
        let fb = finite_diff(&b0.data, |x| eval(&a0.data, x).0);
        assert!(max_rel_err(&ga, &fa) < 1e-6);
        assert!(max_rel_err(&gb, &fb) < 1e-6);
    }

    #[test]
    fn gradient_reverse_forward_identity_and_backward_scaling() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let r = g.gradient_reverse(x, 0.02).unwrap();
        assert_eq!(g.value(r).data, g.value(x).data);
        let loss = g.sum_all(r);
        g.backward(loss).unwrap();
        for v in &g.grad(x).data {
            assert!((v + 0.02).abs() < 1e-15);
        }

        // lambda 0 blocks the gradient entirely
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let r = g.gradient_reverse(x, 0.0).unwrap();
        let loss = g.sum_all(r);
        g.backward(loss).unwrap();
        assert!(g.grad(x).data.iter().all(|v| *v == 0.0));

        assert!(Graph::<f64>::new()
            .gradient_reverse(NodeId(0), -1.0)
            .is_err());
    }

    #[test]
    fn double_reversal_scales_by_the_product_with_positive_sign() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap());
        let r1 = g.gradient_reverse(x, 0.5).unwrap();
        let r2 = g.gradient_reverse(r1, 0.8).unwrap();
        let loss = g.sum_all(r2);
        g.backward(loss).unwrap();
        for v in &g.grad(x).data {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    // One composition touching every primitive, checked per seed.
    fn torture_loss(
        store: &ParamStore<f64>,
        g: &mut Graph<f64>,
        m: usize,
        _k: usize,
        n: usize,
    ) -> Result<NodeId> {
        let a = g.param(store, "a")?;
        let b = g.param(store, "b")?;
        let bias = g.param(store, "bias")?;
        let table = g.param(store, "table")?;
        let kernel = g.param(store, "kernel")?;
        let gain = g.param(store, "gain")?;
        let beta = g.param(store, "beta")?;

        let ids: Vec<usize> = (0..m).map(|i| (i * 3 + 1) % 7).collect();
        let emb = g.embedding_lookup(table, &ids)?;
        let a2 = g.mul(a, emb)?;
        let c = g.matmul(a2, b)?;
        let d = g.add_row(c, bias)?;

        let e = g.tanh(d);
        let f = g.sigmoid(d);
        let r = g.relu(d);
        let ab = g.abs(d);
        let sc = g.scale(d, 0.3);
        let ex = g.exp(sc);

        let s1 = g.sub(e, f)?;
        let m1 = g.mul(s1, r)?;
        let cat = g.concat_cols(&[m1, ab])?;
        let catr = g.concat_rows(&[d, ex])?;
        let sl = g.slice_cols(cat, 0, n)?;
        let sr = g.slice_rows(catr, m / 2, m + 1)?;
        let tr = g.transpose(sl)?;

        // gradient_reverse is excluded: its backward intentionally
        // disagrees with finite differences
        let conv = g.conv1d(d, kernel)?;
        let ln = g.layer_norm(d, gain, beta)?;
        let sm = g.softmax_rows(d)?;
        let att = g.scaled_dot_attention(d, sm, ln, 1)?;

        let logits = g.slice_rows(d, 0, 1)?;
        let sce = g.softmax_cross_entropy(logits, n - 1)?;

        let mr = g.mean_rows(att)?;
        let parts = [
            g.mean_all(tr),
            g.mean_all(sr),
            g.mean_all(conv),
            g.mean_all(ln),
            g.sum_all(mr),
            sce,
        ];
        let mut total = parts[0];
        for p in &parts[1..] {
            total = g.add(total, *p)?;
        }
        Ok(total)
    }

    #[test]
    fn every_primitive_passes_gradient_checks_across_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(2..5usize);
            let k = rng.gen_range(2..5usize);
            let n = rng.gen_range(2..5usize);
            let mut store: ParamStore<f64> = ParamStore::new();
            store.define("a", &[m, k], &mut rng).unwrap();
            store.define("b", &[k, n], &mut rng).unwrap();
            store.define("bias", &[n], &mut rng).unwrap();
            store.define("table", &[7, k], &mut rng).unwrap();
            store.define("kernel", &[3, n, 2], &mut rng).unwrap();
            store.define("gain", &[n], &mut rng).unwrap();
            store.define("beta", &[n], &mut rng).unwrap();
            let err = grad_check(&mut store, |s, g| torture_loss(s, g, m, k, n)).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn shape_mismatches_name_the_op() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[3, 2]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
        let err = g.matmul(a, a).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn bilstm_single_step_uses_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        lstm::define_bilstm(&mut store, "bi", 3, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let xs = g.input(rand_tensor(&mut rng, &[1, 3]));
        let y = lstm::bilstm(&mut g, &store, "bi", xs, 4).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 8]);
        // both halves come from the same single step; with tied params
        // they are identical
        let mut store2: ParamStore<f64> = ParamStore::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        lstm::define_bilstm(&mut store2, "bi", 3, 4, &mut rng2).unwrap();
        for part in ["w_x", "w_h", "b"] {
            let src = store2.value(store2.index_of(&format!("bi.fwd.{part}")).unwrap()).clone();
            let dst = store2.index_of(&format!("bi.bwd.{part}")).unwrap();
            *store2.value_mut(dst) = src;
        }
        let mut g2 = Graph::new();
        let xs2 = g2.input(rand_tensor(&mut rng, &[1, 3]));
        let y2 = lstm::bilstm(&mut g2, &store2, "bi", xs2, 4).unwrap();
        let row = g2.value(y2);
        for c in 0..4 {
            assert!((row.at(0, c) - row.at(0, c + 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn bilstm_with_tied_params_swaps_halves_under_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (t, d, h) = (5, 3, 4);
        let mut store: ParamStore<f64> = ParamStore::new();
        lstm::define_bilstm(&mut store, "bi", d, h, &mut rng).unwrap();
        for part in ["w_x", "w_h", "b"] {
            let src = store.value(store.index_of(&format!("bi.fwd.{part}")).unwrap()).clone();
            let dst = store.index_of(&format!("bi.bwd.{part}")).unwrap();
            *store.value_mut(dst) = src;
        }
        let x = rand_tensor(&mut rng, &[t, d]);
        let mut rev = Tensor::zeros(&[t, d]);
        for r in 0..t {
            for c in 0..d {
                *rev.at_mut(r, c) = x.at(t - 1 - r, c);
            }
        }
        let mut g1 = Graph::new();
        let x1 = g1.input(x);
        let y1 = lstm::bilstm(&mut g1, &store, "bi", x1, h).unwrap();
        let mut g2 = Graph::new();
        let x2 = g2.input(rev);
        let y2 = lstm::bilstm(&mut g2, &store, "bi", x2, h).unwrap();
        // y2[t] = [bwd-half, fwd-half] of y1[T-1-t]
        for r in 0..t {
            for c in 0..h {
                let a = g2.value(y2).at(r, c);
                let b = g1.value(y1).at(t - 1 - r, c + h);
                assert!((a - b).abs() < 1e-12);
                let a2 = g2.value(y2).at(r, c + h);
                let b2 = g1.value(y1).at(t - 1 - r, c);
                assert!((a2 - b2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences_on_a_three_step_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store: ParamStore<f64> = ParamStore::new();
        lstm::define_bilstm_stack(&mut store, "bi", 2, 2, 3, &mut rng).unwrap();
        let xs = rand_tensor(&mut rng, &[3, 2]);
        let err = grad_check(&mut store, |s, g| {
            let x = g.input(xs.clone());
            let y = lstm::bilstm_stack(g, s, "bi", x, 2, 3)?;
            let sq = g.mul(y, y)?;
            Ok(g.mean_all(sq))
        })
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn adam_leaves_params_unchanged_on_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.define("w", &[3, 3], &mut rng).unwrap();
        let before = store.value(0).clone();
        store.zero_grads();
        store.adam_step(0.1);
        assert_eq!(store.value(0), &before);
    }

    #[test]
    fn adam_descends_on_a_quadratic() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.define_zeros("w", &[1]).unwrap();
        store.value_mut(0).data[0] = 1.0;
        for _ in 0..5 {
            store.zero_grads();
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let sq = g.mul(w, w).unwrap();
            let loss = g.sum_all(sq);
            g.backward(loss).unwrap();
            g.apply_grads(&mut store);
            store.adam_step(0.1);
        }
        let w = store.value(0).data[0];
        assert!(w < 1.0 && w > 0.0, "w = {w}");
    }

    #[test]
    fn training_is_bit_deterministic_given_a_seed() {
        let run = || -> Vec<f32> {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut store: ParamStore<f32> = ParamStore::new();
            store.define("w", &[4, 4], &mut rng).unwrap();
            store.define("b", &[4], &mut rng).unwrap();
            for _ in 0..10 {
                store.zero_grads();
                let mut g = Graph::new();
                let w = g.param(&store, "w").unwrap();
                let b = g.param(&store, "b").unwrap();
                let x = g.input(Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f32 * 0.1).collect()).unwrap());
                let y = g.matmul(x, w).unwrap();
                let z = g.add_row(y, b).unwrap();
                let t = g.tanh(z);
                let sq = g.mul(t, t).unwrap();
                let loss = g.mean_all(sq);
                g.backward(loss).unwrap();
                g.apply_grads(&mut store);
                store.adam_step(0.01);
            }
            let mut out = store.value(0).data.clone();
            out.extend_from_slice(&store.value(1).data);
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trips_losslessly_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store: ParamStore<f32> = ParamStore::new();
        store.define("enc.w", &[3, 5], &mut rng).unwrap();
        store.define_zeros("enc.b", &[5]).unwrap();
        store.define("dec.k", &[3, 5, 2], &mut rng).unwrap();
        store.save(&path).unwrap();

        let mut other: ParamStore<f32> = ParamStore::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(77);
        other.define("enc.w", &[3, 5], &mut rng2).unwrap();
        other.define_zeros("enc.b", &[5]).unwrap();
        other.define("dec.k", &[3, 5, 2], &mut rng2).unwrap();
        other.load(&path).unwrap();
        for i in 0..store.len() {
            assert_eq!(store.value(i).data, other.value(i).data);
        }
    }

    #[test]
    fn checkpoint_load_validates_names_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store: ParamStore<f32> = ParamStore::new();
        store.define("w", &[3, 5], &mut rng).unwrap();
        store.save(&path).unwrap();

        let mut wrong_shape: ParamStore<f32> = ParamStore::new();
        wrong_shape.define("w", &[5, 3], &mut rng).unwrap();
        assert!(wrong_shape.load(&path).is_err());

        let mut wrong_name: ParamStore<f32> = ParamStore::new();
        wrong_name.define("v", &[3, 5], &mut rng).unwrap();
        assert!(wrong_name.load(&path).is_err());

        std::fs::write(&path, b"NOTACKPT").unwrap();
        let mut store2: ParamStore<f32> = ParamStore::new();
        store2.define("w", &[3, 5], &mut rng).unwrap();
        assert!(store2.load(&path).is_err());
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        lstm::define_lstm(&mut store, "cell", 3, 4, &mut rng).unwrap();
        let b = store.value(store.index_of("cell.b").unwrap());
        for i in 0..16 {
            let expect = if (4..8).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(b.data[i], expect);
        }
    }
}
