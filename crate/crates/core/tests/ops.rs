//! Kernels against naive reference loops, and every differentiable op
//! against central differences.

use proptest::prelude::*;
use sem_core::gradcheck::{check_gradients, DEFAULT_EPS, DEFAULT_TOLERANCE};
use sem_core::kernels::{self, Activation, BinaryOp};
use sem_core::rng::RngState;
use sem_core::tensor::Tensor;
use sem_core::train::{cmd_gradcheck, OP_SCOPES};
use sem_core::Graph;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = RngState::new(seed, 77).rng();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [b, ci, h, w] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = k.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xx * stride + dx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at(&[n, c, iy as usize, ix as usize])
                                        * k.at(&[o, c, dy, dx]);
                                }
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new([b, co, oh, ow], out).unwrap()
}

#[test]
fn conv2d_matches_direct_loops() {
    for (i, &(stride, pad, k)) in [
        (1, 1, 3),
        (2, 1, 3),
        (1, 0, 1),
        (2, 0, 1),
        (1, 0, 3),
        (3, 2, 3),
    ]
    .iter()
    .enumerate()
    {
        let x = rand_tensor(&[2, 3, 7, 6], i as u64);
        let kern = rand_tensor(&[4, 3, k, k], 100 + i as u64);
        let got = kernels::conv::conv2d(&x, &kern, stride, pad).unwrap();
        let want = naive_conv2d(&x, &kern, stride, pad);
        assert!(
            got.max_abs_diff(&want).unwrap() < 1e-12,
            "stride {stride} pad {pad} k {k}"
        );
    }
}

#[test]
fn conv1d_channel_matches_zero_padded_loop() {
    let m = rand_tensor(&[3, 10], 1);
    let k = rand_tensor(&[5], 2);
    let got = kernels::conv::conv1d_channel(&m, &k).unwrap();
    for b in 0..3 {
        for c in 0..10 {
            let mut acc = 0.0;
            for j in 0..5 {
                let idx = c as isize + j as isize - 2;
                if (0..10).contains(&idx) {
                    acc += k.data()[j] * m.at(&[b, idx as usize]);
                }
            }
            assert!((got.at(&[b, c]) - acc).abs() < 1e-14);
        }
    }
    assert!(kernels::conv::conv1d_channel(&m, &rand_tensor(&[4], 3)).is_err());
}

#[test]
fn affine_matches_loops() {
    let x = rand_tensor(&[3, 5], 4);
    let w = rand_tensor(&[2, 5], 5);
    let b = rand_tensor(&[2], 6);
    let y = kernels::linear::affine(&x, &w, Some(&b)).unwrap();
    for i in 0..3 {
        for o in 0..2 {
            let want: f64 =
                (0..5).map(|j| x.at(&[i, j]) * w.at(&[o, j])).sum::<f64>() + b.data()[o];
            assert!((y.at(&[i, o]) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn batch_norm_matches_definition() {
    let x = rand_tensor(&[4, 3, 2, 2], 7);
    let gamma = rand_tensor(&[3], 8);
    let beta = rand_tensor(&[3], 9);
    let (y, _) = kernels::norm::batch_norm_train(&x, &gamma, &beta).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..4).map(move |p| (n, p)))
            .map(|(n, p)| x.at(&[n, c, p / 2, p % 2]))
            .collect();
        let mean = vals.iter().sum::<f64>() / 16.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        for n in 0..4 {
            for p in 0..4 {
                let want = gamma.data()[c] * (x.at(&[n, c, p / 2, p % 2]) - mean)
                    / (var + 1e-5).sqrt()
                    + beta.data()[c];
                assert!((y.at(&[n, c, p / 2, p % 2]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = rand_tensor(&[3, 4], 10).map(|v| 4.0 * v);
    let labels = [2, 0, 3];
    let (loss, probs) = kernels::loss::softmax_cross_entropy(&logits, &labels).unwrap();
    let mut want_loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row: Vec<f64> = (0..4).map(|j| logits.at(&[i, j])).collect();
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want_loss += z.ln() - row[l];
        for (j, &r) in row.iter().enumerate() {
            assert!((probs.at(&[i, j]) - r.exp() / z).abs() < 1e-14);
        }
    }
    assert!((loss - want_loss / 3.0).abs() < 1e-12);
    let grad = kernels::loss::softmax_cross_entropy_backward(&probs, &labels, 1.0);
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..4 {
            let onehot = if j == l { 1.0 } else { 0.0 };
            assert!((grad.at(&[i, j]) - (probs.at(&[i, j]) - onehot) / 3.0).abs() < 1e-15);
        }
    }
    let report = cmd_gradcheck("softmax_cross_entropy", 3).unwrap();
    assert!(report.max_rel_err() <= 1e-6, "{}", report.max_rel_err());
}

#[test]
fn tanh_gradient_tight() {
    for seed in 0..10 {
        let r = cmd_gradcheck("tanh", seed).unwrap();
        assert!(r.max_rel_err() <= 1e-6, "{}", r.max_rel_err());
    }
}

#[test]
fn extreme_sigmoid_arguments_stay_finite() {
    let x = Tensor::<f64>::from_f64([4], &[-800.0, -40.0, 40.0, 800.0]).unwrap();
    let y = Activation::Sigmoid.forward(&x);
    assert!(y.is_finite());
    assert_eq!(y.data()[3], 1.0);
    assert!(y.data()[0] >= 0.0 && y.data()[0] < 1e-300);
}

#[test]
fn every_op_scope_passes_over_many_instances() {
    let seeds = 8;
    let mut total = 0;
    for scope in OP_SCOPES {
        for seed in 0..seeds {
            let r = cmd_gradcheck(scope, seed).unwrap();
            assert!(
                r.passed(DEFAULT_TOLERANCE),
                "{scope} seed {seed}: {}",
                r.max_rel_err()
            );
            total += 1;
        }
    }
    assert!(total >= 100, "{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn broadcast_mul_gradient(
        b in 1usize..4, c in 1usize..5, h in 1usize..4,
        bcast in 0usize..4, seed in any::<u64>()
    ) {
        let a = rand_tensor(&[b, c, h, h], seed);
        let rhs_shape = match bcast {
            0 => vec![b, c, h, h],
            1 => vec![1, c, 1, 1],
            2 => vec![b, c, 1, 1],
            _ => vec![1, 1, h, h],
        };
        let rhs = rand_tensor(&rhs_shape, seed ^ 1);
        let weights = rand_tensor(&[b, c, h, h], seed ^ 2);
        let groups = check_gradients(&[("a", a), ("b", rhs)], DEFAULT_EPS, |g: &mut Graph<f64>, v| {
            let y = g.binary(v[0], v[1], BinaryOp::Mul)?;
            let w = g.constant(weights.clone());
            let p = g.mul(y, w)?;
            Ok(g.sum(p))
        }).unwrap();
        for gr in groups {
            prop_assert!(gr.max_rel_err <= DEFAULT_TOLERANCE, "{} {}", gr.name, gr.max_rel_err);
        }
    }

    #[test]
    fn conv2d_gradient(
        ci in 1usize..3, co in 1usize..3, h in 3usize..6,
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>()
    ) {
        let x = rand_tensor(&[2, ci, h, h], seed);
        let k = rand_tensor(&[co, ci, 3, 3], seed ^ 5);
        let groups = check_gradients(&[("x", x), ("k", k)], DEFAULT_EPS, |g: &mut Graph<f64>, v| {
            let y = g.conv2d(v[0], v[1], stride, pad)?;
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        }).unwrap();
        for gr in groups {
            prop_assert!(gr.max_rel_err <= DEFAULT_TOLERANCE, "{} {}", gr.name, gr.max_rel_err);
        }
    }

    #[test]
    fn activation_gradients(kind in 0usize..4, seed in any::<u64>()) {
        let act = [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::LeakyRelu(0.01)][kind];
        let x = rand_tensor(&[3, 5], seed).map(|v| 3.0 * v);
        let groups = check_gradients(&[("x", x)], DEFAULT_EPS, |g: &mut Graph<f64>, v| {
            let y = g.activation(v[0], act);
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        }).unwrap();
        prop_assert!(groups[0].max_rel_err <= DEFAULT_TOLERANCE);
    }
}
