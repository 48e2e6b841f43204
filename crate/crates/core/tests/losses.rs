use ifgan::losses::{combined, cross_entropy, d_loss, expr_loss, g_adv_loss, g_objective, l1_loss, LossParts, LossWeights};
use ifgan::tensor::{Tape, Tensor};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean over elements of `−log σ(x)` (target 1) or `−log(1 − σ(x))` (target 0).
fn bce_oracle(logits: &[f64], target: f64) -> f64 {
    let per = |x: f64| if target == 1.0 { softplus(-x) } else { softplus(x) };
    logits.iter().map(|&x| per(x)).sum::<f64>() / logits.len() as f64
}

fn ce_oracle(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.chunks(classes).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

fn patch(values: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(vec![values.len() / 4, 1, 2, 2], values).unwrap()
}

fn d_value(real: &[f64], fake: &[f64]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let r = tape.constant(patch(real));
    let f = tape.constant(patch(fake));
    let v = d_loss(&mut tape, r, f).unwrap();
    tape.value(v).item()
}

fn g_value(fake: &[f64]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let f = tape.constant(patch(fake));
    let v = g_adv_loss(&mut tape, f).unwrap();
    tape.value(v).item()
}

fn ce_value(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(vec![labels.len(), classes], logits).unwrap());
    let v = cross_entropy(&mut tape, x, labels).unwrap();
    tape.value(v).item()
}

#[test]
fn zero_logits_give_log_two() {
    let z = vec![0.0; 8];
    assert!((d_value(&z, &z) - 2.0 * LN2).abs() <= 1e-9);
    assert!((g_value(&z) - LN2).abs() <= 1e-9);
}

#[test]
fn confident_discriminator_has_small_loss() {
    let d = d_value(&[20.0; 4], &[-20.0; 4]);
    assert!(d > 0.0 && d < 1e-8, "{d}");
    let g = g_value(&[20.0; 4]);
    assert!(g < 1e-8, "{g}");
}

#[test]
fn uniform_logits_give_log_k_per_pair() {
    let labels = [0, 3, 5, 2];
    let mut tape = Tape::<f64>::new();
    let r = tape.constant(Tensor::zeros(vec![4, 6]));
    let f = tape.constant(Tensor::zeros(vec![4, 6]));
    let v = expr_loss(&mut tape, r, f, &labels).unwrap();
    assert!((tape.value(v).item() - 2.0 * 6f64.ln()).abs() <= 1e-9);
}

#[test]
fn l1_of_identical_images_is_exactly_zero() {
    let x = Tensor::from_f64(vec![2, 1, 3, 3], &(0..18).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x);
    let v = l1_loss(&mut tape, a, b).unwrap();
    assert_eq!(tape.value(v).item(), 0.0);
}

#[test]
fn l1_is_a_mean() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_f64(vec![1, 1, 2, 2], &[1.0, -1.0, 0.5, 0.0]).unwrap());
    let b = tape.constant(Tensor::zeros(vec![1, 1, 2, 2]));
    let v = l1_loss(&mut tape, a, b).unwrap();
    assert!((tape.value(v).item() - 0.625).abs() < 1e-15);
}

#[test]
fn objective_is_the_weighted_sum() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::scalar(0.5));
    let b = tape.constant(Tensor::scalar(0.25));
    let c = tape.constant(Tensor::scalar(2.0));
    let v = g_objective(&mut tape, &LossWeights::default(), a, b, c).unwrap();
    assert_eq!(tape.value(v).item(), 0.5 + 200.0 * 0.25 + 50.0 * 2.0);
}

#[test]
fn pure_cgan_weights_keep_only_the_adversarial_terms() {
    let w = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };
    let parts = LossParts {
        d: 1.3,
        g_adv: 0.7,
        l1: 0.4,
        expr_real: 1.0,
        expr_fake: 2.0,
    };
    assert_eq!(combined(&parts, &w).unwrap(), (0.7, 1.3, 0.0));
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, n)
}

proptest! {
    #[test]
    fn adversarial_losses_match_the_softplus_oracle(real in logits(8), fake in logits(8)) {
        let want = bce_oracle(&real, 1.0) + bce_oracle(&fake, 0.0);
        let got = d_value(&real, &fake);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        let g = g_value(&fake);
        let gw = bce_oracle(&fake, 1.0);
        prop_assert!((g - gw).abs() <= 1e-9 * gw.max(1.0));
    }

    #[test]
    fn cross_entropy_matches_the_log_sum_exp_oracle(
        values in logits(18),
        labels in prop::collection::vec(0usize..6, 3),
    ) {
        let got = ce_value(&values, 6, &labels);
        let want = ce_oracle(&values, 6, &labels);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn cross_entropy_ignores_a_common_logit_shift(values in logits(12), shift in -50.0f64..50.0) {
        let labels = [1, 4];
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let a = ce_value(&values, 6, &labels);
        let b = ce_value(&shifted, 6, &labels);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn losses_are_non_negative(real in logits(4), fake in logits(4)) {
        prop_assert!(d_value(&real, &fake) >= 0.0);
        prop_assert!(g_value(&fake) >= 0.0);
    }

    #[test]
    fn scaling_weights_scales_every_objective(
        c in 0.01f64..100.0,
        d in 0.0f64..5.0, g_adv in 0.0f64..5.0, l1 in 0.0f64..1.0, er in 0.0f64..3.0, ef in 0.0f64..3.0,
    ) {
        let parts = LossParts { d, g_adv, l1, expr_real: er, expr_fake: ef };
        let w = LossWeights::default();
        let scaled = LossWeights { lambda1: c * w.lambda1, lambda2: c * w.lambda2, lambda3: c * w.lambda3 };
        let (g0, d0, e0) = combined(&parts, &w).unwrap();
        let (g1, d1, e1) = combined(&parts, &scaled).unwrap();
        for (a, b) in [(g0, g1), (d0, d1), (e0, e1)] {
            prop_assert!((c * a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
