use ifgan::tensor::gradcheck::{gradcheck, GradcheckConfig};
use ifgan::tensor::{Elementwise, NormMode, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type R = Result<Var, TensorError>;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

/// Uniform values in ±1 that stay at least 1e-3 away from zero (activation kinks).
fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check<F>(f: F, inputs: &[Tensor<f64>], tol: f64)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> R,
{
    let report = gradcheck(f, inputs, &GradcheckConfig::default()).unwrap();
    assert!(
        report.max_rel_error <= tol,
        "max relative error {} > {tol}",
        report.max_rel_error
    );
}

/// Weighted sum with fixed pseudo-random weights so every output element
/// contributes a distinct amount to the scalar.
fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> R {
    let n = tape.value(y).numel();
    let shape = tape.shape(y).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0 + 0.03).collect();
    let wv = tape.constant(Tensor::new(shape, w).unwrap());
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    let x = tape.constant(t(&[2], &[-1.0, 2.0]));
    let y = tape.elementwise("leaky_relu".parse().unwrap(), x, None).unwrap();
    assert!((tape.value(y).data()[0] + 0.2).abs() < 1e-15);
    assert_eq!(tape.value(y).data()[1], 2.0);
    let c = tape.constant(Tensor::scalar(10.0));
    let m = tape.mul(a, c).unwrap();
    assert_eq!(tape.value(m).data(), &[10.0, 20.0]);
}

#[test]
fn elementwise_errors() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let err = tape.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    assert!(matches!(
        "softplus".parse::<Elementwise>(),
        Err(TensorError::UnknownOp(_))
    ));
    assert!(tape.elementwise(Elementwise::Add, a, None).is_err());
    assert!(tape.elementwise(Elementwise::Tanh, a, Some(a)).is_err());
}

#[test]
fn sigmoid_gradient_matches_finite_difference() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[0.3]).with_requires_grad(true));
    let y = tape.sigmoid(x);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap().get(x).unwrap()[0];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let h = 1e-5;
    let fd = (sig(0.3 + h) - sig(0.3 - h)) / (2.0 * h);
    assert!(((g - fd) / fd).abs() < 1e-5);
}

#[test]
fn every_elementwise_kind_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&[2, 5], &mut rng);
    let b = rand_tensor(&[2, 5], &mut rng);
    for kind in ["add", "sub", "mul"] {
        let k: Elementwise = kind.parse().unwrap();
        check(
            |tp, v| {
                let y = tp.elementwise(k, v[0], Some(v[1]))?;
                weighted_sum(tp, y)
            },
            &[a.clone(), b.clone()],
            1e-4,
        );
    }
    for kind in ["neg", "abs", "tanh", "sigmoid", "relu", "leaky_relu", "leaky_relu(0.1)"] {
        let k: Elementwise = kind.parse().unwrap();
        check(
            |tp, v| {
                let y = tp.elementwise(k, v[0], None)?;
                weighted_sum(tp, y)
            },
            &[a.clone()],
            1e-4,
        );
    }
    // Scalar broadcast on the right operand.
    let s = rand_tensor(&[1], &mut rng);
    check(
        |tp, v| {
            let y = tp.mul(v[0], v[1])?;
            weighted_sum(tp, y)
        },
        &[a, s],
        1e-4,
    );
}

#[test]
fn kinks_use_zero_subgradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[0.0]).with_requires_grad(true));
    let a = tape.abs(x);
    let r = tape.relu(x);
    let s = tape.add(a, r).unwrap();
    let l = tape.sum(s);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), &[0.0]);
}

#[test]
fn matmul_examples_and_gradients() {
    let mut tape = Tape::<f64>::new();
    let id = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(id, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let sel = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
    let m2 = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let q = tape.matmul(sel, m2).unwrap();
    assert_eq!(tape.value(q).data(), &[5.0, 6.0, 0.0, 0.0]);
    let bad = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
    assert!(tape.matmul(m, bad).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4, 2], &mut rng);
    check(
        |tp, v| {
            let y = tp.matmul(v[0], v[1])?;
            weighted_sum(tp, y)
        },
        &[a, b],
        1e-5,
    );
}

#[test]
fn conv2d_all_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[9.0]);

    // Sliding-window oracle with zero padding: count of in-bounds taps.
    let y = tape.conv2d(x, w, None, 1, 1).unwrap();
    let mut expect = Vec::new();
    for oy in 0..3i32 {
        for ox in 0..3i32 {
            let mut n = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (iy, ix) = (oy + dy, ox + dx);
                    if (0..3).contains(&iy) && (0..3).contains(&ix) {
                        n += 1.0;
                    }
                }
            }
            expect.push(n);
        }
    }
    assert_eq!(expect, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    assert_eq!(tape.value(y).data(), expect.as_slice());
}

#[test]
fn conv2d_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(vec![1, 3, 3, 3]));
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 0),
        Err(TensorError::Axis { axis: 1, .. })
    ));
    let w = tape.constant(Tensor::zeros(vec![1, 2, 3, 3]));
    assert!(tape.conv2d(x, w, None, 0, 0).is_err());
    let big = tape.constant(Tensor::zeros(vec![1, 2, 6, 6]));
    assert!(tape.conv2d(x, big, None, 1, 0).is_err());
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
    let w = rand_tensor(&[4, 3, 3, 3], &mut rng);
    let b = rand_tensor(&[4], &mut rng);
    for (stride, pad) in [(1, 0), (2, 1), (1, 1)] {
        check(
            |tp, v| {
                let y = tp.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                weighted_sum(tp, y)
            },
            &[x.clone(), w.clone(), b.clone()],
            1e-4,
        );
    }
}

#[test]
fn conv_transpose_stamps_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[5.0]));
    let w = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
    let y = tape.conv_transpose2d(x, w, None, 2, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[5.0; 4]);
    // H' = (H−1)·stride − 2·pad + k
    let x = tape.constant(Tensor::zeros(vec![1, 1, 4, 4]));
    let w = tape.constant(Tensor::zeros(vec![1, 3, 4, 4]));
    let y = tape.conv_transpose2d(x, w, None, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 8, 8]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
    let w = rand_tensor(&[5, 3, 4, 4], &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w);
    let cx = tape.conv2d(xv, wv, None, 2, 1).unwrap();
    let y = rand_tensor(tape.shape(cx), &mut rng);
    let yv = tape.constant(y.clone());
    let cty = tape.conv_transpose2d(yv, wv, None, 2, 1).unwrap();
    assert_eq!(tape.shape(cty), x.shape());
    let lhs = dot(tape.value(cx).data(), y.data());
    let rhs = dot(x.data(), tape.value(cty).data());
    assert!(((lhs - rhs) / lhs.abs()).abs() < 1e-10);
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[2, 3, 4, 4], &mut rng);
    let w = rand_tensor(&[3, 2, 4, 4], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    check(
        |tp, v| {
            let y = tp.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            weighted_sum(tp, y)
        },
        &[x, w, b],
        1e-4,
    );
}

#[test]
fn norm_of_constant_input_is_zero() {
    for mode in [NormMode::Batch, NormMode::Instance] {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![2, 3, 2, 2], 4.2));
        let g = tape.constant(Tensor::full(vec![3], 1.0));
        let b = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.norm2d(x, g, b, mode, 1e-5, None).unwrap().out;
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn norm_standardizes_two_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 1, 2], &[1.0, 3.0]));
    let g = tape.constant(Tensor::full(vec![1], 1.0));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let y = tape.norm2d(x, g, b, NormMode::Instance, 1e-12, None).unwrap().out;
    let d = tape.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
}

#[test]
fn norm_statistics_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&[3, 2, 4, 4], &mut rng);
    for mode in [NormMode::Batch, NormMode::Instance] {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let g = tape.constant(Tensor::full(vec![2], 1.0));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.norm2d(xv, g, b, mode, 1e-10, None).unwrap().out;
        let d = tape.value(y).data();
        let groups: Vec<Vec<f64>> = match mode {
            NormMode::Batch => (0..2)
                .map(|c| (0..3).flat_map(|bi| d[(bi * 2 + c) * 16..(bi * 2 + c + 1) * 16].to_vec()).collect())
                .collect(),
            NormMode::Instance => d.chunks(16).map(|c| c.to_vec()).collect(),
        };
        for grp in groups {
            let n = grp.len() as f64;
            let mean = grp.iter().sum::<f64>() / n;
            let var = grp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let gamma = rand_tensor(&[2], &mut rng);
        let beta = rand_tensor(&[2], &mut rng);
        check(
            |tp, v| {
                let y = tp.norm2d(v[0], v[1], v[2], mode, 1e-5, None)?.out;
                weighted_sum(tp, y)
            },
            &[x.clone(), gamma, beta],
            1e-4,
        );
    }
}

#[test]
fn batch_norm_population_of_one_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 2, 1, 1]));
    let g = tape.constant(Tensor::full(vec![2], 1.0));
    let b = tape.constant(Tensor::zeros(vec![2]));
    let err = tape.norm2d(x, g, b, NormMode::Batch, 1e-5, None).unwrap_err();
    assert!(err.to_string().contains("instance"), "{err}");
    let bad_gamma = tape.constant(Tensor::full(vec![3], 1.0));
    assert!(tape.norm2d(x, bad_gamma, b, NormMode::Instance, 1e-5, None).is_err());
}

#[test]
fn batch_norm_inference_uses_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&[2, 2, 3, 3], &mut rng);
    let rm = [0.5, -0.25];
    let rv = [2.0, 0.5];
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(t(&[2], &[1.5, 0.5]));
    let b = tape.constant(t(&[2], &[0.1, -0.1]));
    let y = tape
        .norm2d(xv, g, b, NormMode::Batch, 1e-5, Some((&rm, &rv)))
        .unwrap()
        .out;
    for (i, (&o, &xi)) in tape.value(y).data().iter().zip(x.data()).enumerate() {
        let c = (i / 9) % 2;
        let gm = [1.5, 0.5][c];
        let bt = [0.1, -0.1][c];
        let expect = gm * (xi - rm[c]) / (rv[c] + 1e-5f64).sqrt() + bt;
        assert!((o - expect).abs() < 1e-12);
    }
    check(
        |tp, v| {
            let y = tp.norm2d(v[0], v[1], v[2], NormMode::Batch, 1e-5, Some((&rm, &rv)))?.out;
            weighted_sum(tp, y)
        },
        &[x, t(&[2], &[1.5, 0.5]), t(&[2], &[0.1, -0.1])],
        1e-4,
    );
}

#[test]
fn shape_op_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![1, 3, 4, 4]));
    let b = tape.constant(Tensor::zeros(vec![1, 3, 4, 4]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(c), &[1, 6, 4, 4]);

    let ones = tape.constant(Tensor::full(vec![2, 2], 1.0));
    let m = tape.mean_all(ones).unwrap();
    assert_eq!(tape.value(m).data(), &[1.0]);

    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let u = tape.upsample_nearest(x, 2).unwrap();
    // Block replication oracle: out[i][j] = in[i/2][j/2].
    let src = [[1.0, 2.0], [3.0, 4.0]];
    let expect: Vec<f64> = (0..4).flat_map(|i| (0..4).map(move |j| src[i / 2][j / 2])).collect();
    assert_eq!(tape.value(u).data(), expect.as_slice());

    let p = tape.avg_pool(u, 2).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let z = tape.pad_zero(x, 1).unwrap();
    assert_eq!(tape.shape(z), &[4, 4]);
    assert_eq!(tape.value(z).data()[5], 1.0);
    let s = tape.slice(c, 1, 2, 3).unwrap();
    assert_eq!(tape.shape(s), &[1, 3, 4, 4]);
}

#[test]
fn shape_op_errors_name_the_axis() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![1, 3, 4, 4]));
    let b = tape.constant(Tensor::zeros(vec![1, 3, 5, 4]));
    match tape.concat(&[a, b], 1) {
        Err(TensorError::Axis { axis, .. }) => assert_eq!(axis, 2),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    match tape.avg_pool(b, 2) {
        Err(TensorError::Axis { axis, .. }) => assert_eq!(axis, 2),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    assert!(tape.slice(a, 1, 2, 2).is_err());
    assert!(tape.reshape(a, &[5, 5]).is_err());
    assert!(tape.mean(a, &[4]).is_err());
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_tensor(&[2, 3, 4, 4], &mut rng);
    let b = rand_tensor(&[2, 2, 4, 4], &mut rng);
    check(
        |tp, v| {
            let c = tp.concat(&[v[0], v[1]], 1)?;
            weighted_sum(tp, c)
        },
        &[a.clone(), b],
        1e-4,
    );
    check(
        |tp, v| {
            let s = tp.slice(v[0], 2, 1, 2)?;
            let r = tp.reshape(s, &[12, 4])?;
            weighted_sum(tp, r)
        },
        &[a.clone()],
        1e-4,
    );
    check(
        |tp, v| {
            let u = tp.upsample_nearest(v[0], 2)?;
            let p = tp.avg_pool(u, 4)?;
            let z = tp.pad_zero(p, 1)?;
            weighted_sum(tp, z)
        },
        &[a.clone()],
        1e-4,
    );
    check(
        |tp, v| {
            let m = tp.mean(v[0], &[0, 2])?;
            weighted_sum(tp, m)
        },
        &[a.clone()],
        1e-4,
    );
    check(
        |tp, v| {
            let bias = tp.constant(Tensor::from_f64(vec![3], &[0.1, 0.2, 0.3]).unwrap());
            let y = tp.add_channel_bias(v[0], bias)?;
            let y = tp.add_channel_bias(y, v[1])?;
            weighted_sum(tp, y)
        },
        &[a, rand_tensor(&[3], &mut rng)],
        1e-4,
    );
}

#[test]
fn fused_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[3, 4], &mut rng);
    check(|tp, v| tp.bce_with_logits(v[0], 1.0), &[x.clone()], 1e-6);
    check(|tp, v| tp.bce_with_logits(v[0], 0.0), &[x.clone()], 1e-6);
    check(|tp, v| tp.softmax_cross_entropy(v[0], &[0, 3, 1]), &[x], 1e-6);
}

#[test]
fn backward_replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&[2, 2, 6, 6], &mut rng);
    let w = rand_tensor(&[3, 2, 3, 3], &mut rng).with_requires_grad(true);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let wv = tape.leaf(w);
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    let y = tape.tanh(y);
    let l = tape.mean_all(y).unwrap();
    let g1: Vec<u64> = tape.backward(l).unwrap().get(wv).unwrap().iter().map(|v| v.to_bits()).collect();
    let g2: Vec<u64> = tape.backward(l).unwrap().get(wv).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(g1, g2);
}

#[test]
fn f32_engine_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&[1, 2, 6, 6], &mut rng);
    let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let run = |x: &Tensor<f64>, w: &Tensor<f64>| -> Vec<f64> {
        let mut t32 = Tape::<f32>::new();
        let xv = t32.constant(x.cast());
        let wv = t32.constant(w.cast());
        let y = t32.conv2d(xv, wv, None, 1, 1).unwrap();
        t32.value(y).to_f64_vec()
    };
    let mut t64 = Tape::<f64>::new();
    let xv = t64.constant(x.clone());
    let wv = t64.constant(w.clone());
    let y = t64.conv2d(xv, wv, None, 1, 1).unwrap();
    for (a, b) in run(&x, &w).iter().zip(t64.value(y).data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjoint_identity_holds(
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4, out in 2usize..6,
        k in 1usize..5, stride in 1usize..3, pad in 0usize..2, seed in any::<u64>()
    ) {
        // Input extent chosen so the convolution covers it exactly.
        let h = (out - 1) * stride + k;
        prop_assume!(h > 2 * pad);
        let h = h - 2 * pad;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[b, cin, h, h], &mut rng);
        let w = rand_tensor(&[cout, cin, k, k], &mut rng);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w);
        let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = rand_tensor(tape.shape(cx), &mut rng);
        let yv = tape.constant(y.clone());
        let ct = tape.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
        prop_assert_eq!(tape.shape(ct), x.shape());
        let lhs = dot(tape.value(cx).data(), y.data());
        let rhs = dot(x.data(), tape.value(ct).data());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-12));
    }

    #[test]
    fn forward_outputs_are_finite(vals in proptest::collection::vec(-50.0f64..50.0, 16)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 4, 4], vals).unwrap());
        let g = tape.constant(Tensor::full(vec![1], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let n = tape.norm2d(x, g, b, NormMode::Instance, 1e-5, None).unwrap().out;
        let s = tape.sigmoid(n);
        let th = tape.tanh(x);
        let l = tape.bce_with_logits(x, 1.0).unwrap();
        let r = tape.reshape(x, &[4, 4]).unwrap();
        let ce = tape.softmax_cross_entropy(r, &[0, 1, 2, 3]).unwrap();
        for v in [n, s, th, l, ce] {
            prop_assert!(tape.value(v).is_finite());
        }
    }
}
