use msk_autograd::gradcheck::{check_gradients, difference_noise, CheckOptions, Coords};
use msk_autograd::{Graph, NormAxis, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct nested-loop convolution with explicit zero padding.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, padding: usize, stride: usize) -> Vec<Vec<f64>> {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let l_out = (len + 2 * padding - k) / stride + 1;
    let mut out = vec![vec![0.0; l_out]; c_out];
    for co in 0..c_out {
        for l in 0..l_out {
            let mut acc = b.data()[co];
            for ci in 0..c_in {
                for kk in 0..k {
                    let pos = (l * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += w.data()[(co * c_in + ci) * k + kk] * x.data()[ci * len + pos as usize];
                    }
                }
            }
            out[co][l] = acc;
        }
    }
    out
}

#[test]
fn conv1d_summing_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let w = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap());
    let b = g.constant(Tensor::from_vec(vec![0.0]));
    let y = g.conv1d(x, w, b, 0, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1]);
    assert_eq!(g.value(y).data(), &[6.0]);
}

#[test]
fn conv1d_zero_input_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 7]));
    let w = g.constant(random(&[3, 2, 3], &mut rng));
    let b = g.constant(Tensor::from_vec(vec![0.5, -1.0, 2.0]));
    let y = g.conv1d(x, w, b, 3, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[3, 11]);
    for c in 0..3 {
        assert!(out.row(c).iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
    }
}

#[test]
fn conv1d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xt = random(&[2, 10], &mut rng);
    let wt = random(&[4, 2, 3], &mut rng);
    let bt = random(&[4], &mut rng);
    for (padding, stride) in [(3, 1), (0, 1), (1, 2), (3, 3)] {
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(xt.clone()), g.constant(wt.clone()), g.constant(bt.clone()));
        let y = g.conv1d(x, w, b, padding, stride).unwrap();
        let expected = conv_oracle(&xt, &wt, &bt, padding, stride);
        let out = g.value(y);
        assert_eq!(out.shape(), &[4, expected[0].len()]);
        for (co, row) in expected.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                assert!((out.at2(co, l) - v).abs() < 1e-12, "pad {padding} stride {stride}");
            }
        }
    }
}

#[test]
fn conv1d_shape_errors_name_dimension() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 5]));
    let w = g.constant(Tensor::zeros(&[4, 3, 3]));
    let b = g.constant(Tensor::zeros(&[4]));
    match g.conv1d(x, w, b, 0, 1) {
        Err(TensorError::ShapeMismatch { dim, expected: 2, found: 3, .. }) => {
            assert!(dim.contains("input channels"))
        }
        other => panic!("unexpected {other:?}"),
    }
    let w = g.constant(Tensor::zeros(&[4, 2, 9]));
    assert!(matches!(g.conv1d(x, w, b, 1, 1), Err(TensorError::InvalidArgument { .. })));
    let w = g.constant(Tensor::zeros(&[4, 2, 3]));
    assert!(g.conv1d(x, w, b, 0, 0).is_err());
}

#[test]
fn dense_identity_zero_and_oracle() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1.5, -2.0, 0.25]));
    let eye = g.constant(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
    let zero_b = g.constant(Tensor::zeros(&[3]));
    let y = g.dense(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, -2.0, 0.25]);

    let zero_w = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::from_vec(vec![4.0, -3.0]));
    let y = g.dense(x, zero_w, b).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, -3.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wt = random(&[3, 2], &mut rng);
    let xt = random(&[2], &mut rng);
    let bt = random(&[3], &mut rng);
    let (w, xv, bv) = (g.constant(wt.clone()), g.constant(xt.clone()), g.constant(bt.clone()));
    let y = g.dense(xv, w, bv).unwrap();
    for i in 0..3 {
        let mut acc = bt.data()[i];
        for j in 0..2 {
            acc += wt.at2(i, j) * xt.data()[j];
        }
        assert!((g.value(y).data()[i] - acc).abs() < 1e-12);
    }

    let bad = g.constant(Tensor::zeros(&[4]));
    assert!(matches!(g.dense(bad, w, bv), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn dense_maps_matrix_columns_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let wt = random(&[5, 3], &mut rng);
    let bt = random(&[5], &mut rng);
    let xt = random(&[3, 4], &mut rng);
    let mut g = Graph::new();
    let (w, b, x) = (g.constant(wt.clone()), g.constant(bt.clone()), g.constant(xt.clone()));
    let y = g.dense(x, w, b).unwrap();
    for col in 0..4 {
        let xc = g.constant(Tensor::from_vec(xt.column(col)));
        let yc = g.dense(xc, w, b).unwrap();
        assert_eq!(g.value(yc).data(), g.value(y).column(col).as_slice());
    }
}

#[test]
fn elementwise_primitives() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5]);

    let pm = g.constant(Tensor::from_vec(vec![1.0, -1.0]));
    let sq = g.square(pm).unwrap();
    let m = g.mean(sq).unwrap();
    assert_eq!(g.value(m).data(), &[1.0]);

    let two = g.constant(Tensor::scalar(2.0));
    let prod = g.mul(x, two).unwrap();
    assert_eq!(g.value(prod).data(), &[-2.0, 0.0, 4.0]);
    let diff = g.sub(two, x).unwrap();
    assert_eq!(g.value(diff).data(), &[3.0, 2.0, 0.0]);

    let mismatched = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(g.add(x, mismatched), Err(TensorError::Incompatible { .. })));
}

#[test]
fn non_finite_values_raise() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1.0, 1e300]));
    assert!(matches!(g.square(x), Err(TensorError::NonFinite { op: "square", index: 1 })));
}

#[test]
fn seq_norm_examples() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::from_vec(vec![3.0]));
    let shift = g.constant(Tensor::from_vec(vec![0.5]));
    let constant = g.constant(Tensor::matrix(1, 4, vec![2.0; 4]).unwrap());
    let y = g.seq_norm(constant, gain, shift, 1e-8).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.5));

    let one = g.constant(Tensor::from_vec(vec![1.0]));
    let zero = g.constant(Tensor::from_vec(vec![0.0]));
    let pair = g.constant(Tensor::matrix(1, 2, vec![-1.0, 1.0]).unwrap());
    let y = g.seq_norm(pair, one, zero, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);

    let short = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
    assert!(g.seq_norm(short, one, zero, 1e-8).is_err());
}

#[test]
fn seq_norm_moments_recomputed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let x = g.constant(random(&[3, 8], &mut rng));
    let gain = g.constant(Tensor::full(&[3], 1.0));
    let shift = g.constant(Tensor::zeros(&[3]));
    // epsilon 0 so the unit-variance check is not biased by the stabilizer
    let y = g.seq_norm(x, gain, shift, 0.0).unwrap();
    let out = g.value(y);
    for c in 0..3 {
        let row = out.row(c);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn feature_norm_normalizes_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut g = Graph::new();
    let x = g.constant(random(&[6, 4], &mut rng));
    let gain = g.constant(Tensor::full(&[6], 1.0));
    let shift = g.constant(Tensor::zeros(&[6]));
    let y = g.norm(x, gain, shift, NormAxis::Feature, 0.0).unwrap();
    for c in 0..4 {
        let col = g.value(y).column(c);
        let mean = col.iter().sum::<f64>() / 6.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn dropout_identity_cases_and_rate_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[10], 1.0));
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.3, false, &mut rng).unwrap(), x);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(g.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_preserves_mean_within_three_standard_errors() {
    let n = 100_000;
    let rate = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[n], 1.0));
    let y = g.dropout(x, rate, true, &mut rng).unwrap();
    let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
    // each element is Bernoulli(1 - rate) / (1 - rate): variance rate / (1 - rate)
    let se = (rate / (1.0 - rate) / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn dropout_rows_masks_whole_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[64, 10], 1.0));
    let y = g.dropout_rows(x, 0.5, true, &mut rng).unwrap();
    let out = g.value(y);
    let mut dropped = 0;
    for r in 0..64 {
        let row = out.row(r);
        assert!(row.iter().all(|&v| v == row[0]));
        if row[0] == 0.0 {
            dropped += 1;
        } else {
            assert_eq!(row[0], 2.0);
        }
    }
    assert!(dropped > 0 && dropped < 64);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 3]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    assert_eq!(grads.get(x).unwrap().shape(), &[2, 3]);

    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![3.0]));
    let sq = g.square(x).unwrap();
    let m = g.mean(sq).unwrap();
    assert_eq!(g.backward(m).unwrap().get(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar_and_fills_unreached_leaves() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[3]));
    let unused = g.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    let gu = grads.get(unused).unwrap();
    assert_eq!(gu.shape(), &[2, 2]);
    assert!(gu.data().iter().all(|&v| v == 0.0));
}

fn check(params: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> msk_autograd::Result<Var>) {
    let report = check_gradients(params, f, CheckOptions::default()).unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst);
}

#[test]
fn gradcheck_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&[3, 9], &mut rng);
    let w = random(&[4, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let weights = random(&[5, 3], &mut rng);
    let bias = random(&[5], &mut rng);
    let gain = random(&[3], &mut rng);
    let shift = random(&[3], &mut rng);
    let target = random(&[3, 9], &mut rng);

    // weighted sum so that every output element carries a distinct cotangent
    let project = |g: &mut Graph, y: Var| -> msk_autograd::Result<Var> {
        let shape = g.value(y).shape().to_vec();
        let n: usize = shape.iter().product();
        let c = g.constant(Tensor::new(shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect())?);
        let p = g.mul(y, c)?;
        g.sum(p)
    };

    check(&[x.clone(), w.clone(), b.clone()], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 3, 1)?;
        project(g, y)
    });
    check(&[x.clone(), w.clone(), b.clone()], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 1, 2)?;
        project(g, y)
    });
    check(&[x.clone(), weights.clone(), bias.clone()], |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        project(g, y)
    });
    check(&[weights.clone(), x.clone()], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y)
    });
    check(&[x.clone(), gain.clone(), shift.clone()], |g, v| {
        let y = g.seq_norm(v[0], v[1], v[2], 1e-8)?;
        project(g, y)
    });
    check(&[x.clone(), gain.clone(), shift.clone()], |g, v| {
        let y = g.norm(v[0], v[1], v[2], NormAxis::Feature, 1e-8)?;
        project(g, y)
    });
    check(&[x.clone(), target.clone()], |g, v| {
        let d = g.sub(v[0], v[1])?;
        let s = g.square(d)?;
        g.mean(s)
    });
    check(&[x.clone()], |g, v| {
        let a = g.sigmoid(v[0])?;
        let s = g.sin(a)?;
        let r = g.relu(v[0])?;
        let m = g.mul(s, r)?;
        let t = g.transpose(m)?;
        let sl = g.slice(t, 0, 2, 5)?;
        let re = g.reshape(sl, vec![15])?;
        let af = g.affine(re, -1.5, 0.25)?;
        project(g, af)
    });
    check(&[x.clone(), Tensor::scalar(0.7)], |g, v| {
        let m = g.mul(v[0], v[1])?;
        let a = g.add(m, v[1])?;
        let s = g.sub(v[1], a)?;
        project(g, s)
    });
    check(&[x.clone()], |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = g.dropout(v[0], 0.3, true, &mut rng)?;
        let d = g.dropout_rows(d, 0.3, true, &mut rng)?;
        project(g, d)
    });
}

#[test]
fn identical_seeds_give_identical_values_and_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let x = g.param(random(&[2, 12], &mut rng));
        let w = g.param(random(&[5, 2, 3], &mut rng));
        let b = g.param(random(&[5], &mut rng));
        let y = g.conv1d(x, w, b, 3, 1).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.dropout(y, 0.3, true, &mut rng).unwrap();
        let sq = g.square(y).unwrap();
        let loss = g.mean(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        (
            g.value(loss).data().to_vec(),
            grads.get(w).unwrap().data().to_vec(),
            grads.get(x).unwrap().data().to_vec(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

fn grad_of(x: &Tensor, f: impl Fn(&mut Graph, Var) -> Var) -> Vec<f64> {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v);
    g.backward(out).unwrap().get(v).unwrap().data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 6], &mut rng);
        let f = |g: &mut Graph, v: Var| { let s = g.sin(v).unwrap(); g.sum(s).unwrap() };
        let h = |g: &mut Graph, v: Var| { let s = g.square(v).unwrap(); g.mean(s).unwrap() };
        let combined = grad_of(&x, |g, v| {
            let fa = f(g, v);
            let fa = g.scale(fa, a).unwrap();
            let hb = h(g, v);
            let hb = g.scale(hb, b).unwrap();
            g.add(fa, hb).unwrap()
        });
        let gf = grad_of(&x, f);
        let gh = grad_of(&x, h);
        for i in 0..x.len() {
            prop_assert!((combined[i] - (a * gf[i] + b * gh[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_length_formula(len in 1usize..20, k in 1usize..6, padding in 0usize..4, stride in 1usize..4) {
        prop_assume!(k <= len + 2 * padding);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, len]));
        let w = g.constant(Tensor::zeros(&[2, 1, k]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv1d(x, w, b, padding, stride).unwrap();
        prop_assert_eq!(g.value(y).shape()[1], (len + 2 * padding - k) / stride + 1);
    }
}

#[test]
fn difference_noise_floor_covers_structurally_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random(&[3, 40], &mut rng);
    let w = random(&[4, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    // the time norm removes any per-channel constant, so the bias gradient is exactly zero
    let f = |g: &mut Graph, v: &[Var]| -> msk_autograd::Result<Var> {
        let y = g.conv1d(v[0], v[1], v[2], 1, 1)?;
        let ones = g.constant(Tensor::new(vec![4], vec![1.0; 4])?);
        let zeros = g.constant(Tensor::zeros(&[4]));
        let n = g.seq_norm(y, ones, zeros, 1e-8)?;
        let s = g.sin(n)?;
        let q = g.affine(s, 1e3, 0.0)?;
        g.sum(q)
    };
    let params = [x, w, b];
    let step = 1e-6;
    let noise = difference_noise(&params, &f, step, 8, 1).unwrap();
    assert!(noise > 0.0 && noise < 1e-4, "{noise}");
    let report = check_gradients(&params, f, CheckOptions { step, floor: noise / 1e-4, coords: Coords::All }).unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst);
}
