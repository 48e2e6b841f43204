//! The gradient-check suite behind the `gradcheck` command: every tape
//! primitive on small random inputs, plus the full joint objective of all
//! three networks on an 8×8 two-sample micro-batch.

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{self, LossWeights};
use crate::models::Architecture;
use crate::nn::{Forward, ParamStore};
use crate::tensor::gradcheck::{gradcheck, GradcheckConfig};
use crate::tensor::{Elementwise, NormMode, OpTag, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    /// Multiplies the number of elements checked per input.
    pub scale: usize,
    pub seed: u64,
    pub tol: f64,
    /// Corrupt one backward rule to confirm the suite notices.
    pub fault: Option<OpTag>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scale: 1,
            seed: 0,
            tol: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

type R = std::result::Result<Var, TensorError>;

/// Values in ±[0.05, 1), away from the kinks of abs and the rectifiers.
fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Fixed uneven weights so every output element matters differently.
fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> R {
    let shape = tape.shape(y).to_vec();
    let n = tape.value(y).numel();
    let w = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0 + 0.03).collect();
    let wv = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> R>;

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<Tensor<f64>>, CaseFn)> {
    let mut cases: Vec<(String, Vec<Tensor<f64>>, CaseFn)> = Vec::new();
    let unary = [
        ("neg", Elementwise::Neg),
        ("abs", Elementwise::Abs),
        ("tanh", Elementwise::Tanh),
        ("sigmoid", Elementwise::Sigmoid),
        ("relu", Elementwise::Relu),
        ("leaky_relu", Elementwise::LeakyRelu(Elementwise::DEFAULT_LEAKY_SLOPE)),
    ];
    for (name, kind) in unary {
        cases.push((
            name.into(),
            vec![rand_tensor(&[2, 3, 2], rng)],
            Box::new(move |t, v| {
                let y = t.elementwise(kind, v[0], None)?;
                weighted_sum(t, y)
            }),
        ));
    }
    cases.push((
        "scale".into(),
        vec![rand_tensor(&[2, 3], rng)],
        Box::new(|t, v| {
            let y = t.scale(v[0], -1.7);
            weighted_sum(t, y)
        }),
    ));
    for (name, kind) in [("add", Elementwise::Add), ("sub", Elementwise::Sub), ("mul", Elementwise::Mul)] {
        cases.push((
            name.into(),
            vec![rand_tensor(&[2, 3, 2], rng), rand_tensor(&[2, 3, 2], rng)],
            Box::new(move |t, v| {
                let y = t.elementwise(kind, v[0], Some(v[1]))?;
                weighted_sum(t, y)
            }),
        ));
    }
    cases.push((
        "matmul".into(),
        vec![rand_tensor(&[3, 4], rng), rand_tensor(&[4, 2], rng)],
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "conv2d".into(),
        vec![rand_tensor(&[2, 2, 5, 5], rng), rand_tensor(&[3, 2, 3, 3], rng), rand_tensor(&[3], rng)],
        Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "conv_transpose2d".into(),
        vec![rand_tensor(&[2, 3, 3, 3], rng), rand_tensor(&[3, 2, 4, 4], rng), rand_tensor(&[2], rng)],
        Box::new(|t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            weighted_sum(t, y)
        }),
    ));
    for mode in [NormMode::Instance, NormMode::Batch] {
        cases.push((
            format!("norm2d_{mode:?}").to_lowercase(),
            vec![rand_tensor(&[2, 3, 3, 3], rng), rand_tensor(&[3], rng), rand_tensor(&[3], rng)],
            Box::new(move |t, v| {
                let y = t.norm2d(v[0], v[1], v[2], mode, 1e-5, None)?.out;
                weighted_sum(t, y)
            }),
        ));
    }
    cases.push((
        "channel_bias".into(),
        vec![rand_tensor(&[2, 3, 2, 2], rng), rand_tensor(&[3], rng)],
        Box::new(|t, v| {
            let y = t.add_channel_bias(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "concat".into(),
        vec![rand_tensor(&[2, 1, 2, 2], rng), rand_tensor(&[2, 2, 2, 2], rng)],
        Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "slice".into(),
        vec![rand_tensor(&[2, 4, 3], rng)],
        Box::new(|t, v| {
            let y = t.slice(v[0], 1, 1, 2)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "reshape".into(),
        vec![rand_tensor(&[2, 6], rng)],
        Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "upsample_nearest".into(),
        vec![rand_tensor(&[1, 2, 2, 3], rng)],
        Box::new(|t, v| {
            let y = t.upsample_nearest(v[0], 2)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "avgpool".into(),
        vec![rand_tensor(&[1, 2, 4, 4], rng)],
        Box::new(|t, v| {
            let y = t.avg_pool(v[0], 2)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "pad_zero".into(),
        vec![rand_tensor(&[1, 2, 2, 2], rng)],
        Box::new(|t, v| {
            let y = t.pad_zero(v[0], 1)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "mean".into(),
        vec![rand_tensor(&[2, 3, 2, 2], rng)],
        Box::new(|t, v| {
            let y = t.mean(v[0], &[2, 3])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "sum".into(),
        vec![rand_tensor(&[2, 3], rng)],
        Box::new(|t, v| {
            let y = t.tanh(v[0]);
            Ok(t.sum(y))
        }),
    ));
    cases.push((
        "bce_with_logits".into(),
        vec![rand_tensor(&[2, 1, 3, 3], rng)],
        Box::new(|t, v| {
            let a = t.bce_with_logits(v[0], 1.0)?;
            let b = t.bce_with_logits(v[0], 0.0)?;
            let b = t.scale(b, 0.3);
            t.add(a, b)
        }),
    ));
    cases.push((
        "softmax_cross_entropy".into(),
        vec![rand_tensor(&[3, 6], rng)],
        Box::new(|t, v| t.softmax_cross_entropy(v[0], &[0, 4, 5])),
    ));
    cases
}

fn micro_batch(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Vec<usize>) {
    let img = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..64).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let an = img(rng);
    let mut an2 = an.clone();
    an2.extend_from_slice(&an);
    let se: Vec<f64> = (0..2).flat_map(|_| img(rng)).collect();
    let ae: Vec<f64> = (0..2).flat_map(|_| img(rng)).collect();
    let t = |v: Vec<f64>| Tensor::new(vec![2, 1, 8, 8], v).expect("8x8 pair");
    (t(an2), t(se), t(ae), vec![1, 4])
}

/// `λ1·(d + g_adv) + λ2·l1 + λ3·(ce_real + 2·ce_fake)`: every term of
/// the joint objective with gradient flowing into all three networks.
fn joint_objective(
    arch: &Architecture,
    store: &ParamStore<f64>,
    batch: &(Tensor<f64>, Tensor<f64>, Tensor<f64>, Vec<usize>),
    fault: Option<OpTag>,
) -> Result<(Tape<f64>, Var)> {
    let (g, d) = (arch.generator.as_ref().expect("micro G"), arch.discriminator.as_ref().expect("micro D"));
    let w = LossWeights::default();
    let mut tape = Tape::new();
    if let Some(tag) = fault {
        tape.inject_fault(tag);
    }
    let an = tape.constant(batch.0.clone());
    let se = tape.constant(batch.1.clone());
    let ae = tape.constant(batch.2.clone());
    let mut f = Forward::new(&mut tape, store, true, true);
    let fake = g.forward(&mut f, an, se, None)?;
    let dr = d.forward(&mut f, an, se, ae)?;
    let df = d.forward(&mut f, an, se, fake)?;
    let er = arch.classifier.forward_pair(&mut f, se, ae)?;
    let ef = arch.classifier.forward_pair(&mut f, se, fake)?;
    let t = f.tape;
    let dl = losses::d_loss(t, dr, df)?;
    let adv = losses::g_adv_loss(t, df)?;
    let l1 = losses::l1_loss(t, fake, ae)?;
    let ce_fake = losses::cross_entropy(t, ef, &batch.3)?;
    let expr = losses::expr_loss(t, er, ef, &batch.3)?;
    let go = losses::g_objective(t, &w, adv, l1, ce_fake)?;
    let dobj = losses::d_objective(t, &w, dl)?;
    let eo = losses::e_objective(t, &w, expr)?;
    let s = t.add(go, dobj)?;
    let total = t.add(s, eo)?;
    Ok((tape, total))
}

fn joint_case(cfg: &SuiteConfig, per_param: usize) -> Result<CaseResult> {
    let arch = Architecture::micro(1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store: ParamStore<f64> = arch.init(cfg.seed)?;
    // Lift biases and affine terms off their zero initialization so every
    // path carries gradient.
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let t = store.get_mut(name).expect("listed");
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = micro_batch(&mut rng);
    let (tape, out) = joint_objective(&arch, &store, &batch, cfg.fault)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    let floor = 1e-6 * value.abs().max(1.0);
    let h = GradcheckConfig::default().step;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    // A network used twice puts its parameters on the tape twice; the
    // derivative with respect to the stored value is the sum.
    let mut analytic_by_name: IndexMap<String, Vec<f64>> = IndexMap::new();
    for (name, var) in tape.params() {
        let n = store.get(name).expect("tape param in store").numel();
        let slot = analytic_by_name.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if let Some(g) = grads.get(*var) {
            slot.iter_mut().zip(g).for_each(|(s, v)| *s += v);
        }
    }
    for (name, analytic) in analytic_by_name {
        let n = analytic.len();
        let mut idx: Vec<usize> = if n > per_param { sample(&mut rng, n, per_param).into_vec() } else { (0..n).collect() };
        idx.sort_unstable();
        for i in idx {
            let orig = store.get(&name).expect("listed").data()[i];
            let mut at = |v: f64| -> Result<f64> {
                store.get_mut(&name).expect("listed").data_mut()[i] = v;
                let (t, o) = joint_objective(&arch, &store, &batch, None)?;
                Ok(t.value(o).item())
            };
            let plus = at(orig + h)?;
            let minus = at(orig - h)?;
            at(orig)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i];
            max_rel = max_rel.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            checked += 1;
        }
    }
    Ok(CaseResult {
        name: "joint_objective".into(),
        checked,
        max_rel_error: max_rel,
        passed: max_rel <= cfg.tol,
    })
}

/// Runs every case; failures are reported, not returned as errors.
pub fn gradcheck_suite(cfg: &SuiteConfig) -> Result<Vec<CaseResult>> {
    let scale = cfg.scale.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gc = GradcheckConfig {
        tol: cfg.tol,
        max_elements_per_input: 48 * scale,
        seed: cfg.seed,
        fault: cfg.fault,
        ..GradcheckConfig::default()
    };
    let mut out = Vec::new();
    for (name, inputs, f) in primitive_cases(&mut rng) {
        let r = gradcheck(|t: &mut Tape<f64>, v: &[Var]| f(t, v), &inputs, &gc)?;
        out.push(CaseResult {
            name,
            checked: r.checks.len(),
            max_rel_error: r.max_rel_error,
            passed: r.passed(),
        });
    }
    out.push(joint_case(cfg, 4 * scale)?);
    Ok(out)
}
