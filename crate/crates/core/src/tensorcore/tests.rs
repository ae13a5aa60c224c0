use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

// Independent oracles: plain nested loops, no shared code with the kernels.

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let xv = |s: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((s * cin + c) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = Vec::new();
    for s in 0..n {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let i = (oy * stride + ki) as isize - pad as isize;
                                let j = (ox * stride + kj) as isize - pad as isize;
                                acc += w.data()[((o * cin + c) * kh + ki) * kw + kj] * xv(s, c, i, j);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn matmul_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        for o in 0..dout {
            let mut acc = 0.0;
            for k in 0..din {
                acc += x.data()[i * din + k] * w.data()[o * din + k];
            }
            out[i * dout + o] = acc + b.data()[o];
        }
    }
    out
}

fn ce_oracle(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l].exp() / z).ln();
    }
    total / labels.len() as f64
}

fn ortho_oracle(a: &Tensor<f64>) -> f64 {
    let d = a.shape()[0];
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut aat = 0.0;
            for k in 0..d {
                aat += a.data()[i * d + k] * a.data()[j * d + k];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            total += (id - aat) * (id - aat);
        }
    }
    total
}

#[test]
fn conv_pointwise_scales() {
    let x = t32(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
    let out = conv2d(&x, &t32(&[1, 1, 1, 1], &[2.]), &t32(&[1], &[0.]), 1, 0).unwrap();
    assert_eq!(out.shape(), &[1, 1, 2, 2]);
    assert_eq!(out.data(), &[2., 4., 6., 8.]);
}

#[test]
fn conv_sums_kernel_support() {
    let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let out = conv2d(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), &t32(&[1], &[0.]), 1, 0).unwrap();
    assert_eq!(out.shape(), &[1, 1, 2, 2]);
    assert_eq!(out.data(), &[4.; 4]);
}

#[test]
fn conv_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[2, 3, 8, 8], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    for (stride, pad) in [(1, 1), (2, 0), (2, 1), (1, 0)] {
        let out = conv2d(&x, &w, &b, stride, pad).unwrap();
        let want = conv_oracle(&x, &w, &b, stride, pad);
        assert_eq!(out.numel(), want.len());
        for (a, e) in out.data().iter().zip(&want) {
            assert!((a - e).abs() <= 1e-6, "stride {stride} pad {pad}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
    let err = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap_err();
    assert!(matches!(err, TensorError::Shape(ref m) if m.contains("channels")), "{err}");
    let big = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
    assert!(conv2d(&x, &big.reshape(&[1, 2, 5, 5]).unwrap(), &Tensor::zeros(&[1]), 1, 0).is_err());
}

#[test]
fn maxpool_window_max() {
    let out = maxpool2d(&t32(&[1, 1, 2, 2], &[1., 2., 3., 4.]), 2).unwrap();
    assert_eq!(out.data(), &[4.]);
}

#[test]
fn maxpool_ties_route_to_first_index() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::full(&[1, 2, 4, 4], 3.0).with_requires_grad(true));
    let y = tape.maxpool2d(x, 2).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    for p in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let window: Vec<f32> = (0..2)
                    .flat_map(|dy| (0..2).map(move |dx| (dy, dx)))
                    .map(|(dy, dx)| g[p * 16 + (oy * 2 + dy) * 4 + ox * 2 + dx])
                    .collect();
                assert_eq!(window, vec![1.0, 0.0, 0.0, 0.0]);
            }
        }
    }
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[1, 2, 4, 4], &mut rng);
    let out = maxpool2d(&x, 2).unwrap();
    for c in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[c * 16 + (oy * 2 + dy) * 4 + ox * 2 + dx]);
                    }
                }
                assert_eq!(out.data()[c * 4 + oy * 2 + ox], m);
            }
        }
    }
}

#[test]
fn maxpool_rejects_non_divisible() {
    assert!(maxpool2d(&Tensor::<f32>::zeros(&[1, 1, 5, 4]), 2).is_err());
}

#[test]
fn relu_examples() {
    assert_eq!(relu(&t32(&[3], &[-1., 0., 2.])).data(), &[0., 0., 2.]);
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[4], &[-1., -2., -0.5, -3.]).with_requires_grad(true));
    let y = tape.relu(x);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn relu_zero_has_zero_subgradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![0.0, 1.0]).unwrap().with_requires_grad(true));
    let y = tape.relu(x);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn linear_examples() {
    let x = t32(&[1, 2], &[1., 2.]);
    let out = linear(&x, &t32(&[2, 2], &[3., 4., 5., 6.]), &t32(&[2], &[1., -1.])).unwrap();
    assert_eq!(out.data(), &[12., 16.]);
    let id = linear(&x, &Tensor::eye(2), &Tensor::zeros(&[2])).unwrap();
    assert_eq!(id.data(), x.data());
    assert!(linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
}

#[test]
fn linear_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[7, 5], &mut rng);
    let b = random(&[7], &mut rng);
    let out = linear(&x, &w, &b).unwrap();
    for (a, e) in out.data().iter().zip(matmul_oracle(&x, &w, &b)) {
        assert!((a - e).abs() <= 1e-6);
    }
}

#[test]
fn flatten_examples() {
    let x = t32(&[2, 1, 1, 3], &[1., 2., 3., 4., 5., 6.]);
    let f = flatten(&x);
    assert_eq!(f.shape(), &[2, 3]);
    assert_eq!(f.data(), x.data());
    assert!(flatten(&f).bit_eq(&f));
    let y = Tensor::<f32>::from_fn(&[1, 3, 2, 2], |i| i as f32);
    assert!(flatten(&y).reshape(&[1, 3, 2, 2]).unwrap().bit_eq(&y));
}

#[test]
#[allow(clippy::approx_constant)]
fn cross_entropy_examples() {
    let uniform = Tensor::<f64>::full(&[3, 10], 0.25);
    let l = softmax_cross_entropy(&uniform, &[0, 4, 9]).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-12);
    assert!((l - 2.302585).abs() < 1e-6);

    let big = t32(&[1, 2], &[1000., 0.]);
    let l = softmax_cross_entropy(&big, &[0]).unwrap();
    assert!(l.is_finite() && l.abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random(&[4, 6], &mut rng);
    let labels = [0, 5, 2, 3];
    let l = softmax_cross_entropy(&logits, &labels).unwrap();
    assert!((l - ce_oracle(&logits, &labels)).abs() <= 1e-6);

    let err = softmax_cross_entropy(&logits, &[0, 6, 1, 1]).unwrap_err();
    assert_eq!(err, TensorError::LabelOutOfRange { label: 6, classes: 6 });
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap().with_requires_grad(true));
    let l = tape.softmax_cross_entropy(x, &[0]).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[-0.5, 0.5]);
}

#[test]
fn orthogonality_examples() {
    for d in [1, 3, 8] {
        assert_eq!(orthogonality_penalty(&Tensor::<f64>::eye(d)).unwrap(), 0.0);
    }
    let two_i = Tensor::<f64>::from_fn(&[64, 64], |i| if i / 64 == i % 64 { 2.0 } else { 0.0 });
    assert_eq!(orthogonality_penalty(&two_i).unwrap(), 576.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random(&[5, 5], &mut rng);
    assert!((orthogonality_penalty(&a).unwrap() - ortho_oracle(&a)).abs() <= 1e-8);

    assert!(orthogonality_penalty(&Tensor::<f64>::zeros(&[2, 3])).is_err());
}

#[test]
fn orthogonality_zero_on_rotation() {
    let (s, c) = (0.3f64.sin(), 0.3f64.cos());
    let rot = Tensor::new(&[2, 2], vec![c, -s, s, c]).unwrap();
    assert!(orthogonality_penalty(&rot).unwrap() < 1e-15);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f32).with_requires_grad(true));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
    assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn reused_leaf_accumulates_contributions() {
    // f = sum(x) + sum(x) + sum(x) -> grad 3
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![1.0, -1.0]).unwrap().with_requires_grad(true));
    let a = tape.sum(x);
    let b = tape.sum(x);
    let c = tape.sum(x);
    let ab = tape.add(a, b).unwrap();
    let abc = tape.add(ab, c).unwrap();
    tape.backward(abc).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
}

#[test]
fn frozen_leaf_gets_no_gradient() {
    let mut tape = Tape::<f32>::new();
    let w = tape.constant(Tensor::full(&[2, 2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.leaf(Tensor::full(&[1, 2], 1.0).with_requires_grad(true));
    let y = tape.linear(x, w, b).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(w).is_none());
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn gather_and_concat_columns() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap().with_requires_grad(true));
    let g = tape.gather_cols(x, &[2, 0]).unwrap();
    assert_eq!(tape.value(g).data(), &[3., 1., 6., 4.]);
    let c = tape.concat_cols(g, x).unwrap();
    assert_eq!(tape.shape(c), &[2, 5]);
    assert_eq!(tape.value(c).data(), &[3., 1., 1., 2., 3., 6., 4., 4., 5., 6.]);
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2., 1., 2., 2., 1., 2.]);
}

#[test]
fn composed_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = vec![
        random(&[2, 1, 4, 4], &mut rng),
        random(&[2, 1, 3, 3], &mut rng),
        random(&[2], &mut rng),
        random(&[3, 8], &mut rng),
        random(&[3], &mut rng),
    ];
    let r = grad_check(
        |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let r = t.relu(c);
            let p = t.maxpool2d(r, 2)?;
            let f = t.flatten(p);
            let l = t.linear(f, v[3], v[4])?;
            t.softmax_cross_entropy(l, &[2, 0])
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Tensor::<f32>::from_fn(&[3, 2, 6, 6], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(&[4, 2, 3, 3], |_| rng.random_range(-1.0..1.0)).with_requires_grad(true);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.leaf(w);
        let bv = tape.constant(Tensor::zeros(&[4]));
        let c = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        let f = tape.flatten(c);
        let l = tape.softmax_cross_entropy(f, &[0, 1, 2]).unwrap();
        tape.backward(l).unwrap();
        (tape.value(l).clone(), tape.grad(wv).unwrap().to_vec())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert!(l1.bit_eq(&l2));
    assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_shape_law(h in 1usize..10, w in 1usize..10, k in 1usize..5, stride in 1usize..4, pad in 0usize..3) {
        prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
        let x = Tensor::<f32>::zeros(&[1, 2, h, w]);
        let out = conv2d(&x, &Tensor::zeros(&[3, 2, k, k]), &Tensor::zeros(&[3]), stride, pad).unwrap();
        prop_assert_eq!(out.shape(), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
    }

    #[test]
    fn relu_identity(values in proptest::collection::vec(-100.0f64..100.0, 1..32)) {
        let x = Tensor::new(&[values.len()], values.clone()).unwrap();
        let neg = Tensor::new(&[values.len()], values.iter().map(|v| -v).collect()).unwrap();
        let (a, b) = (relu(&x), relu(&neg));
        for ((p, q), v) in a.data().iter().zip(b.data()).zip(&values) {
            prop_assert_eq!(p + q, v.abs());
        }
    }

    #[test]
    fn cross_entropy_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&[3, 5], &mut rng);
        let shifted = Tensor::new(&[3, 5], logits.data().iter().map(|v| v + shift).collect()).unwrap();
        let labels = [1, 4, 0];
        let a = softmax_cross_entropy(&logits, &labels).unwrap();
        let b = softmax_cross_entropy(&shifted, &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn orthogonality_matches_explicit_sum(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[d, d], &mut rng);
        prop_assert!((orthogonality_penalty(&a).unwrap() - ortho_oracle(&a)).abs() <= 1e-8);
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&[2, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let b = random(&[3], &mut rng);
        let a_sq = random(&[4, 4], &mut rng);
        // f(x) = CE(linear(x)), g(x) = orthogonality(reshape(x)) with a fixed square embedding.
        let grads = |coef_f: f64, coef_g: f64| {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(x0.clone().with_requires_grad(true));
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let av = t.constant(a_sq.clone());
            let l = t.linear(x, wv, bv).unwrap();
            let f = t.softmax_cross_entropy(l, &[0, 2]).unwrap();
            let xr = t.reshape(x, &[2, 4]).unwrap();
            let xx = t.concat_cols(xr, xr).unwrap();
            let sq = t.reshape(xx, &[4, 4]).unwrap();
            let m = t.mul(sq, av).unwrap();
            let g = t.orthogonality_penalty(m).unwrap();
            let fs = t.scale(f, coef_f);
            let gs = t.scale(g, coef_g);
            let total = t.add(fs, gs).unwrap();
            t.backward(total).unwrap();
            t.grad(x).unwrap().to_vec()
        };
        let combined = grads(ca, cb);
        let gf = grads(1.0, 0.0);
        let gg = grads(0.0, 1.0);
        for i in 0..combined.len() {
            prop_assert!((combined[i] - (ca * gf[i] + cb * gg[i])).abs() <= 1e-10);
        }
    }
}
