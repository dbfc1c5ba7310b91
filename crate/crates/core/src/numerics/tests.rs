use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(&[rows, cols], data).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut t = Tape::detached();
    let x = t.constant(Tensor::zeros(&[1, 3])).unwrap();
    let y = t.softmax(x, Axis::Cols).unwrap();
    for v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn linear_with_zero_weights_emits_bias() {
    let mut t = Tape::detached();
    let x = t.constant(random(5, 4, 1)).unwrap();
    let w = t.constant(Tensor::zeros(&[4, 3])).unwrap();
    let b = t
        .constant(Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap())
        .unwrap();
    let y = t.linear(x, w, Some(b)).unwrap();
    for r in 0..5 {
        assert_eq!(t.value(y).row(r), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn sigmoid_sum_gradient_at_zero_is_one_quarter() {
    // Central difference of sum(sigmoid(x)) at x = 0 with h = 1e-5 gives
    // 0.25 to ~1e-11, the value frozen here.
    let mut t = Tape::detached();
    let x = t.leaf(Tensor::zeros(&[2, 3]).with_grad()).unwrap();
    let s = t.sigmoid(x).unwrap();
    let y = t.sum_all(s).unwrap();
    let g = t.backward(y).unwrap();
    for v in g.get(x).unwrap() {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

fn two_pass_context_norm(x: &Tensor, eps: f64) -> Tensor {
    let (n, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[n, c]);
    for j in 0..c {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            out.data_mut()[i * c + j] = (x.get(i, j) - mean) / (var + eps).sqrt();
        }
    }
    out
}

#[test]
fn context_norm_matches_two_pass_oracle() {
    let x = random(64, 8, 7);
    let y = context_norm(&x, NORM_EPS).unwrap();
    let oracle = two_pass_context_norm(&x, NORM_EPS);
    for (a, b) in y.data().iter().zip(oracle.data()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn context_norm_columns_are_standardised() {
    let x = random(50, 6, 2);
    let y = context_norm(&x, 1e-12).unwrap();
    for j in 0..6 {
        let col: Vec<f64> = (0..50).map(|i| y.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn context_norm_of_constant_column_is_zero() {
    let x = Tensor::full(&[10, 2], 3.5);
    let y = context_norm(&x, NORM_EPS).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn context_norm_needs_two_rows() {
    let x = Tensor::zeros(&[1, 4]);
    assert!(matches!(
        context_norm(&x, NORM_EPS),
        Err(NumericsError::Shape(_))
    ));
}

#[test]
fn division_by_zero_is_reported() {
    let mut t = Tape::detached();
    let a = t.constant(Tensor::full(&[2, 2], 1.0)).unwrap();
    let b = t.constant(Tensor::zeros(&[1, 1])).unwrap();
    assert!(matches!(t.div(a, b), Err(NumericsError::NonFinite(_))));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut t = Tape::detached();
    let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = t.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(t.add(a, b).is_err());
    assert!(t.matmul(a, a).is_err());
    assert!(t.gather_rows(a, &[0, 2]).is_err());
}

#[test]
fn grad_check_rejects_steps_outside_range() {
    let x = random(2, 2, 0);
    assert!(grad_check(|t, x| t.square(x), &x, 1e-2).is_err());
}

#[test]
fn linear_layer_gradient() {
    let w = random(4, 3, 11);
    let b = random(1, 3, 12);
    let err = grad_check(
        |t, x| {
            let w = t.constant(w.clone())?;
            let b = t.constant(b.clone())?;
            t.linear(x, w, Some(b))
        },
        &random(6, 4, 13),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    // and with respect to the weights
    let x = random(6, 4, 13);
    let err = grad_check(
        |t, w| {
            let x = t.constant(x.clone())?;
            let y = t.linear(x, w, None)?;
            t.square(y)
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn context_norm_gradient() {
    let weights = random(16, 5, 21);
    let err = grad_check(
        |t, x| {
            let y = t.context_norm(x, NORM_EPS)?;
            let w = t.constant(weights.clone())?;
            t.mul(y, w)
        },
        &random(16, 5, 22),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn elementwise_and_broadcast_gradients() {
    let row = random(1, 4, 31);
    let col = random(5, 1, 32);
    let err = grad_check(
        |t, x| {
            let r = t.constant(row.clone())?;
            let c = t.constant(col.clone())?;
            let a = t.mul(x, r)?;
            let b = t.sub(a, c)?;
            let s = t.sigmoid(b)?;
            let e = t.elu_plus_one(x)?;
            let d = t.div(s, e)?;
            let th = t.tanh(d)?;
            let ex = t.exp(th)?;
            let sq = t.square(ex)?;
            let sc = t.scale(sq, 0.3)?;
            t.offset(sc, 1.0)
        },
        &random(5, 4, 33),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");

    // gradients flowing into the broadcast operand
    let x = random(5, 4, 34);
    let err = grad_check(
        |t, c| {
            let x = t.constant(x.clone())?;
            let p = t.elu_plus_one(c)?;
            let d = t.div(x, p)?;
            let m = t.mul(d, c)?;
            t.add(m, c)
        },
        &col,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn matmul_gradients_for_all_transposes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [4, 3] } else { [3, 4] };
        let b_shape = if tb { [5, 4] } else { [4, 5] };
        let b = random(b_shape[0], b_shape[1], 41);
        let err = grad_check(
            |t, a| {
                let b = t.constant(b.clone())?;
                let c = t.matmul_t(a, b, ta, tb)?;
                t.square(c)
            },
            &random(a_shape[0], a_shape[1], 42),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "a ta={ta} tb={tb}: {err}");
        let a = random(a_shape[0], a_shape[1], 42);
        let err = grad_check(
            |t, b| {
                let a = t.constant(a.clone())?;
                let c = t.matmul_t(a, b, ta, tb)?;
                t.square(c)
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "b ta={ta} tb={tb}: {err}");
    }
}

#[test]
fn reduction_softmax_and_indexing_gradients() {
    let w = random(6, 7, 51);
    let err = grad_check(
        |t, x| {
            let s0 = t.softmax(x, Axis::Rows)?;
            let s1 = t.softmax(x, Axis::Cols)?;
            let p = t.mul(s0, s1)?;
            let wv = t.constant(w.clone())?;
            let p = t.mul(p, wv)?;
            let m0 = t.max(x, Axis::Rows)?;
            let m1 = t.max(x, Axis::Cols)?;
            let a0 = t.mean(p, Axis::Rows)?;
            let a1 = t.sum(p, Axis::Cols)?;
            let g = t.gather_rows(x, &[5, 0, 0, 3, 1, 2])?;
            let sl = t.slice_cols(g, 2, 3)?;
            let cat = t.concat_cols(&[m1, a1, sl])?;
            let tr = t.transpose(cat)?;
            let rs = t.reshape(tr, 2, 15)?;
            let sq = t.square(rs)?;
            let s = t.sum_all(sq)?;
            let m0s = t.sum_all(m0)?;
            let a0s = t.sum_all(a0)?;
            let u = t.add(s, m0s)?;
            t.add(u, a0s)
        },
        &random(6, 7, 52),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn bce_gradient_and_values() {
    let mut t = Tape::detached();
    let x = t.constant(Tensor::zeros(&[1, 4])).unwrap();
    let l = t.bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0]).unwrap();
    assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let labels = [1.0, 0.0, 1.0, 0.0, 1.0];
    let err = grad_check(
        |t, x| t.bce_with_logits(x, &labels),
        &random(1, 5, 61),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn weighted_null_vector_gradient() {
    let rows = random(12, 4, 71);
    let err = grad_check(
        |t, w| {
            let r = t.constant(rows.clone())?;
            let v = t.weighted_null_vector(r, w)?;
            let c = t.constant(Tensor::new(&[1, 4], vec![0.3, -0.2, 0.9, 0.1])?)?;
            t.mul(v, c)
        },
        &Tensor::new(&[12, 1], (0..12).map(|i| 0.2 + 0.05 * i as f64).collect()).unwrap(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn params_receive_gradients_and_grad_check_params_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let block = PointCn::new(&mut store, &mut rng, "pcn", 3, 4).unwrap();
    let x = random(10, 3, 81);
    let f = |t: &mut Tape| {
        let xv = t.constant(x.clone())?;
        let y = block.forward(t, xv)?;
        let y = t.square(y)?;
        t.sum_all(y)
    };
    let err = grad_check_params(&store, f, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");

    let mut tape = Tape::new(&store);
    let y = f(&mut tape).unwrap();
    let grads = tape.backward(y).unwrap();
    let pg = tape.param_grads(&grads);
    assert_eq!(pg.0.len(), store.len());
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let block = PointCn::new(&mut store, &mut rng, "pcn", 4, 4).unwrap();
    let x = random(20, 4, 3);
    let run = || {
        let mut t = Tape::inference(&store);
        let xv = t.constant(x.clone()).unwrap();
        let y = block.forward(&mut t, xv).unwrap();
        t.value(y).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn context_norm_is_permutation_equivariant(seed in 0u64..1000, n in 2usize..20) {
        let x = random(n, 3, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut px = Tensor::zeros(&[n, 3]);
        for (i, &p) in perm.iter().enumerate() {
            px.data_mut()[i * 3..(i + 1) * 3].copy_from_slice(x.row(p));
        }
        let y = context_norm(&x, NORM_EPS).unwrap();
        let py = context_norm(&px, NORM_EPS).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..3 {
                prop_assert!((py.get(i, j) - y.get(p, j)).abs() < 1e-12);
            }
        }
    }
}
