use ifgan::models::{Architecture, ClassifierDesc, DiscriminatorDesc, GeneratorDesc, D_PREFIX, E_PREFIX, G_PREFIX};
use ifgan::nn::{Forward, ParamStore};
use ifgan::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(b: usize, side: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..b * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![b, 1, side, side], data).unwrap()
}

fn perturbed(arch: &Architecture, seed: u64) -> ParamStore<f64> {
    let mut store = arch.init(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for n in names {
        for v in store.get_mut(&n).unwrap().data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    store
}

/// Central differences on every parameter element the tape records,
/// against the tape gradient; returns the worst relative error.
fn finite_difference_error(
    store: &mut ParamStore<f64>,
    objective: impl Fn(&ParamStore<f64>) -> (Tape<f64>, Var),
) -> f64 {
    let (tape, out) = objective(store);
    let value = tape.value(out).item();
    let grads = tape.backward(out).unwrap();
    let floor = 1e-6 * value.abs().max(1.0);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, var) in tape.params().to_vec() {
        let n = store.get(&name).unwrap().numel();
        let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in (0..n).step_by(n.div_ceil(6)) {
            let orig = store.get(&name).unwrap().data()[i];
            let mut at = |v: f64| {
                store.get_mut(&name).unwrap().data_mut()[i] = v;
                let (t, o) = objective(store);
                t.value(o).item()
            };
            let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
            at(orig);
            let a = analytic[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
    }
    worst
}

fn generate(desc: &GeneratorDesc, store: &ParamStore<f64>, an: &Tensor<f64>, se: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(an.clone());
    let s = tape.constant(se.clone());
    let mut f = Forward::new(&mut tape, store, false, false);
    let y = desc.forward(&mut f, a, s, None).unwrap();
    tape.value(y).clone()
}

#[test]
fn desk_generator_keeps_the_image_shape_and_starts_at_zero() {
    let arch = Architecture::ifgan(1, 6);
    let g = arch.generator.as_ref().unwrap();
    let store = arch.init(0).unwrap();
    let out = generate(g, &store, &images(2, 64, 1), &images(2, 64, 2));
    assert_eq!(out.shape(), &[2, 1, 64, 64]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn generator_output_stays_inside_the_open_unit_interval() {
    let arch = Architecture::micro(1, 6);
    let g = arch.generator.as_ref().unwrap();
    let mut store = perturbed(&arch, 3);
    // Inflate the weights so tanh saturates as far as it can.
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for n in names {
        for v in store.get_mut(&n).unwrap().data_mut() {
            *v *= 50.0;
        }
    }
    let out = generate(g, &store, &images(2, 8, 4), &images(2, 8, 5));
    assert!(out.data().iter().all(|&v| v.abs() <= 1.0));
}

#[test]
fn generator_rejects_an_indivisible_extent() {
    let arch = Architecture::ifgan(1, 6);
    let store = arch.init(0).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(images(1, 24, 0));
    let s = tape.constant(images(1, 24, 1));
    let mut f = Forward::new(&mut tape, &store, false, false);
    let err = arch.generator.as_ref().unwrap().forward(&mut f, a, s, None).unwrap_err().to_string();
    assert!(err.contains("16"), "{err}");
}

#[test]
fn generator_gradients_match_finite_differences() {
    let arch = Architecture::micro(1, 6);
    let g = arch.generator.clone().unwrap();
    let (an, se) = (images(2, 8, 6), images(2, 8, 7));
    let mut store = perturbed(&arch, 8);
    let err = finite_difference_error(&mut store, |s| {
        let mut tape = Tape::new();
        let a = tape.constant(an.clone());
        let b = tape.constant(se.clone());
        let mut f = Forward::new(&mut tape, s, true, true);
        let y = g.forward(&mut f, a, b, None).unwrap();
        let m = tape.mean_all(y).unwrap();
        (tape, m)
    });
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn desk_discriminator_emits_a_six_by_six_patch_map() {
    let arch = Architecture::ifgan(1, 6);
    let d = arch.discriminator.as_ref().unwrap();
    assert_eq!(d.output_extent(64), Some(6));
    let store = arch.init(0).unwrap();
    let mut tape = Tape::new();
    let x: Vec<Var> = (0..3).map(|k| tape.constant(images(2, 64, k))).collect();
    let mut f = Forward::new(&mut tape, &store, false, false);
    let y = d.forward(&mut f, x[0], x[1], x[2]).unwrap();
    assert_eq!(tape.shape(y), &[2, 1, 6, 6]);
}

#[test]
fn discriminator_patch_map_is_larger_than_one_pixel_at_supported_sizes() {
    let d = DiscriminatorDesc::desk(1);
    for side in [32, 48, 64, 128] {
        assert!(d.output_extent(side).unwrap() > 1, "side {side}");
    }
}

#[test]
fn discriminator_rejects_mismatched_tuples() {
    let arch = Architecture::micro(1, 6);
    let store = arch.init(0).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(images(1, 8, 0));
    let b = tape.constant(images(1, 8, 1));
    let c = tape.constant(images(1, 16, 2));
    let mut f = Forward::new(&mut tape, &store, false, false);
    assert!(arch.discriminator.as_ref().unwrap().forward(&mut f, a, b, c).is_err());
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let arch = Architecture::micro(1, 6);
    let d = arch.discriminator.clone().unwrap();
    let x: Vec<Tensor<f64>> = (0..3).map(|k| images(2, 8, 10 + k)).collect();
    let mut store = perturbed(&arch, 11);
    let err = finite_difference_error(&mut store, |s| {
        let mut tape = Tape::new();
        let v: Vec<Var> = x.iter().map(|t| tape.constant(t.clone())).collect();
        let mut f = Forward::new(&mut tape, s, true, true);
        let y = d.forward(&mut f, v[0], v[1], v[2]).unwrap();
        let m = tape.mean_all(y).unwrap();
        (tape, m)
    });
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let arch = Architecture::ifgan(1, 6);
    let store = arch.init(0).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(images(3, 64, 0));
    let b = tape.constant(images(3, 64, 1));
    let mut f = Forward::new(&mut tape, &store, false, false);
    let y = arch.classifier.forward_pair(&mut f, a, b).unwrap();
    assert_eq!(tape.shape(y), &[3, 6]);
    let ce = tape.softmax_cross_entropy(y, &[0, 2, 5]).unwrap();
    assert!((tape.value(ce).item() - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn classifier_rejects_mismatched_pairs() {
    let arch = Architecture::micro(1, 6);
    let store = arch.init(0).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(images(1, 8, 0));
    let b = tape.constant(images(2, 8, 1));
    let mut f = Forward::new(&mut tape, &store, false, false);
    assert!(arch.classifier.forward_pair(&mut f, a, b).is_err());
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let arch = Architecture::micro(1, 6);
    let e = arch.classifier.clone();
    let (a, b) = (images(2, 8, 20), images(2, 8, 21));
    let mut store = perturbed(&arch, 22);
    let err = finite_difference_error(&mut store, |s| {
        let mut tape = Tape::new();
        let x = tape.constant(a.clone());
        let y = tape.constant(b.clone());
        let mut f = Forward::new(&mut tape, s, true, true);
        let logits = e.forward_pair(&mut f, x, y).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[1, 4]).unwrap();
        (tape, ce)
    });
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn parameter_counts_match_the_closed_forms() {
    for arch in [Architecture::ifgan(1, 6), Architecture::baseline(1, 6), Architecture::micro(1, 6)] {
        let store: ParamStore<f64> = arch.init(0).unwrap();
        assert_eq!(store.num_elements(), arch.param_count());
        let g = arch.generator.as_ref().map_or(0, GeneratorDesc::param_count);
        let d = arch.discriminator.as_ref().map_or(0, DiscriminatorDesc::param_count);
        assert_eq!(store.num_elements_with_prefix(G_PREFIX), g);
        assert_eq!(store.num_elements_with_prefix(D_PREFIX), d);
        assert_eq!(store.num_elements_with_prefix(E_PREFIX), arch.classifier.param_count());
    }
}

#[test]
fn classifier_counts_follow_width_and_class_count() {
    for (width, classes) in [(4, 3), (8, 6), (16, 7)] {
        let c = ClassifierDesc {
            base_width: width,
            classes,
            ..ClassifierDesc::desk(1, 6)
        };
        let arch = Architecture {
            generator: None,
            discriminator: None,
            classifier: c.clone(),
        };
        let store: ParamStore<f64> = arch.init(0).unwrap();
        assert_eq!(store.num_elements(), c.param_count());
    }
}

fn run_all(arch: &Architecture, store: &ParamStore<f64>, x: [&Tensor<f64>; 3]) -> [Tensor<f64>; 3] {
    let mut tape = Tape::new();
    let v: Vec<Var> = x.iter().map(|t| tape.constant((*t).clone())).collect();
    let mut f = Forward::new(&mut tape, store, false, false);
    let g = arch.generator.as_ref().unwrap().forward(&mut f, v[0], v[1], None).unwrap();
    let d = arch.discriminator.as_ref().unwrap().forward(&mut f, v[0], v[1], v[2]).unwrap();
    let e = arch.classifier.forward_pair(&mut f, v[1], v[2]).unwrap();
    [tape.value(g).clone(), tape.value(d).clone(), tape.value(e).clone()]
}

fn swap_batch(t: &Tensor<f64>) -> Tensor<f64> {
    let per = t.numel() / 2;
    let d = t.data();
    let swapped: Vec<f64> = d[per..].iter().chain(&d[..per]).copied().collect();
    Tensor::new(t.shape().to_vec(), swapped).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn inference_is_deterministic_and_batch_equivariant(seed in 0u64..1000) {
        let arch = Architecture::micro(1, 6);
        let store = perturbed(&arch, seed);
        let x = [images(2, 8, seed), images(2, 8, seed + 1), images(2, 8, seed + 2)];
        let a = run_all(&arch, &store, [&x[0], &x[1], &x[2]]);
        let again = run_all(&arch, &store, [&x[0], &x[1], &x[2]]);
        prop_assert_eq!(&a, &again);
        let sx = [swap_batch(&x[0]), swap_batch(&x[1]), swap_batch(&x[2])];
        let b = run_all(&arch, &store, [&sx[0], &sx[1], &sx[2]]);
        for (u, v) in a.iter().zip(&b) {
            let su = swap_batch(u);
            for (p, q) in su.data().iter().zip(v.data()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn generator_shape_follows_the_input(k in 1usize..4, b in 1usize..3) {
        let arch = Architecture::micro(1, 6);
        let g = arch.generator.as_ref().unwrap();
        let side = 4 * k;
        let store = arch.init(0).unwrap();
        let out = generate(g, &store, &images(b, side, 0), &images(b, side, 1));
        prop_assert_eq!(out.shape(), &[b, 1, side, side]);
    }
}
