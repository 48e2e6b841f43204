use crate::error::{config, Error, Result};
use crate::losses::{self, LossParts, LossWeights};
use crate::models::{Architecture, ClassifierDesc, DiscriminatorDesc, GeneratorDesc, D_PREFIX, E_PREFIX, G_PREFIX};
use crate::nn::{adam_step, AdamState, Forward, ParamStore};
use crate::tensor::{Element, Tape, Tensor, Var};

use super::config::TrainConfig;

/// Network inputs of one step, all `[B, C, M, M]` in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub i_an: Tensor<T>,
    pub i_se: Tensor<T>,
    /// The training-fold average face of each sample's class.
    pub i_ae: Tensor<T>,
    pub labels: Vec<usize>,
    pub dropout_seed: u64,
}

/// One optimizer per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers<T> {
    pub g: Option<AdamState<T>>,
    pub d: Option<AdamState<T>>,
    pub e: AdamState<T>,
}

impl<T: Element> Optimizers<T> {
    pub fn new(cfg: &TrainConfig, params: &ParamStore<T>) -> Self {
        let with_gan = !cfg.architecture.is_baseline();
        Self {
            g: with_gan.then(|| AdamState::new(cfg.adam_g, params, G_PREFIX)),
            d: with_gan.then(|| AdamState::new(cfg.adam_d, params, D_PREFIX)),
            e: AdamState::new(cfg.adam_e, params, E_PREFIX),
        }
    }

    pub fn cast<U: Element>(&self) -> Optimizers<U> {
        Optimizers {
            g: self.g.as_ref().map(AdamState::cast),
            d: self.d.as_ref().map(AdamState::cast),
            e: self.e.cast(),
        }
    }
}

/// Scalar record of one optimization step. Networks absent from the run
/// (the baseline has no G or D) report zero losses and learning rates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l1: f64,
    pub expr_real: f64,
    pub expr_fake: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_e: f64,
    pub wall_ms: u64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,d_loss,g_adv,l1,expr_real,expr_fake,lr_g,lr_d,lr_e,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.d_loss,
            self.g_adv,
            self.l1,
            self.expr_real,
            self.expr_fake,
            self.lr_g,
            self.lr_d,
            self.lr_e,
            self.wall_ms
        )
    }
}

/// Outcome of one network's update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Update {
    /// Largest gradient magnitude that reached a network other than the
    /// one being updated (always 0 when detachment is correct).
    pub leaked_grad: f64,
}

fn gan<'a>(arch: &'a Architecture) -> Result<(&'a GeneratorDesc, &'a DiscriminatorDesc, &'a ClassifierDesc)> {
    match (&arch.generator, &arch.discriminator) {
        (Some(g), Some(d)) => Ok((g, d, &arch.classifier)),
        _ => Err(config("this step needs a generator and a discriminator")),
    }
}

struct Inputs {
    i_an: Var,
    i_se: Var,
    i_ae: Var,
}

fn inputs<T: Element>(tape: &mut Tape<T>, b: &Batch<T>) -> Inputs {
    Inputs {
        i_an: tape.constant(b.i_an.clone()),
        i_se: tape.constant(b.i_se.clone()),
        i_ae: tape.constant(b.i_ae.clone()),
    }
}

fn scalar<T: Element>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).item().as_f64()
}

/// `Ĩ_AE` recorded with G as trainable parameters, then cut from the graph.
fn detached_fake<T: Element>(tape: &mut Tape<T>, params: &ParamStore<T>, g: &GeneratorDesc, x: &Inputs, seed: u64) -> Result<Var> {
    let fake = {
        let mut f = Forward::new(tape, params, true, true);
        g.forward(&mut f, x.i_an, x.i_se, Some(seed))?
    };
    let value = tape.value(fake).clone();
    Ok(tape.constant(value))
}

/// Backpropagates `objective`, routes gradients of parameters under
/// `prefix` into the store and takes one Adam step on them.
fn apply<T: Element>(
    tape: &Tape<T>,
    objective: Var,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    prefix: &str,
    stats: &[(String, Vec<T>, Vec<T>)],
) -> Result<Update> {
    let value = scalar(tape, objective);
    params.zero_grads();
    let grads = tape.backward(objective)?;
    let mut leaked = 0.0f64;
    for (name, var) in tape.params() {
        let Some(g) = grads.get(*var) else { continue };
        if name.starts_with(prefix) {
            params
                .get_mut(name)
                .ok_or_else(|| config(format!("tape parameter `{name}` is not in the store")))?
                .accumulate_grad(g);
        } else {
            leaked = g.iter().fold(leaked, |m, v| m.max(v.as_f64().abs()));
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("{prefix} objective is {value}")));
    }
    adam_step(params, opt)?;
    let own: Vec<_> = stats.iter().filter(|s| s.0.starts_with(prefix)).cloned().collect();
    params.apply_running_stats(&own)?;
    Ok(Update { leaked_grad: leaked })
}

/// D update on the real tuple against the detached fake tuple; returns
/// the discriminator loss.
pub fn d_update<T: Element>(
    arch: &Architecture,
    w: &LossWeights,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
) -> Result<(f64, Update)> {
    let (g, d, _) = gan(arch)?;
    let mut tape = Tape::new();
    let x = inputs(&mut tape, batch);
    let fake = detached_fake(&mut tape, params, g, &x, batch.dropout_seed)?;
    let (real_logits, fake_logits, stats) = {
        let mut f = Forward::new(&mut tape, params, true, true);
        let r = d.forward(&mut f, x.i_an, x.i_se, x.i_ae)?;
        let k = d.forward(&mut f, x.i_an, x.i_se, fake)?;
        (r, k, f.stats)
    };
    let loss = losses::d_loss(&mut tape, real_logits, fake_logits)?;
    let obj = losses::d_objective(&mut tape, w, loss)?;
    let up = apply(&tape, obj, params, opt, D_PREFIX, &stats)?;
    Ok((scalar(&tape, loss), up))
}

/// G update through frozen D and E; returns `(g_adv, l1)`.
pub fn g_update<T: Element>(
    arch: &Architecture,
    w: &LossWeights,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
) -> Result<(f64, f64, Update)> {
    let (g, d, e) = gan(arch)?;
    let mut tape = Tape::new();
    let x = inputs(&mut tape, batch);
    let (fake, stats) = {
        let mut f = Forward::new(&mut tape, params, true, true);
        let y = g.forward(&mut f, x.i_an, x.i_se, Some(batch.dropout_seed))?;
        (y, f.stats)
    };
    let (d_logits, e_logits) = {
        let mut f = Forward::new(&mut tape, params, false, true);
        let dl = d.forward(&mut f, x.i_an, x.i_se, fake)?;
        let el = e.forward_pair(&mut f, x.i_se, fake)?;
        (dl, el)
    };
    let adv = losses::g_adv_loss(&mut tape, d_logits)?;
    let l1 = losses::l1_loss(&mut tape, fake, x.i_ae)?;
    let ce = losses::cross_entropy(&mut tape, e_logits, &batch.labels)?;
    let obj = losses::g_objective(&mut tape, w, adv, l1, ce)?;
    let up = apply(&tape, obj, params, opt, G_PREFIX, &stats)?;
    Ok((scalar(&tape, adv), scalar(&tape, l1), up))
}

/// E update on the real pair and the detached fake pair; returns the two
/// cross-entropies.
pub fn e_update<T: Element>(
    arch: &Architecture,
    w: &LossWeights,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
) -> Result<(f64, f64, Update)> {
    let (g, _, e) = gan(arch)?;
    let mut tape = Tape::new();
    let x = inputs(&mut tape, batch);
    let fake = detached_fake(&mut tape, params, g, &x, batch.dropout_seed)?;
    let (real_logits, fake_logits, stats) = {
        let mut f = Forward::new(&mut tape, params, true, true);
        let r = e.forward_pair(&mut f, x.i_se, x.i_ae)?;
        let k = e.forward_pair(&mut f, x.i_se, fake)?;
        (r, k, f.stats)
    };
    let ce_real = losses::cross_entropy(&mut tape, real_logits, &batch.labels)?;
    let ce_fake = losses::cross_entropy(&mut tape, fake_logits, &batch.labels)?;
    let expr = tape.add(ce_real, ce_fake)?;
    let obj = losses::e_objective(&mut tape, w, expr)?;
    let up = apply(&tape, obj, params, opt, E_PREFIX, &stats)?;
    Ok((scalar(&tape, ce_real), scalar(&tape, ce_fake), up))
}

/// Baseline update: the classifier alone on single images `I_SE`;
/// returns its cross-entropy.
pub fn baseline_update<T: Element>(
    arch: &Architecture,
    w: &LossWeights,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    batch: &Batch<T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let i_se = tape.constant(batch.i_se.clone());
    let (logits, stats) = {
        let mut f = Forward::new(&mut tape, params, true, true);
        let l = arch.classifier.forward(&mut f, i_se)?;
        (l, f.stats)
    };
    let ce = losses::cross_entropy(&mut tape, logits, &batch.labels)?;
    let obj = losses::e_objective(&mut tape, w, ce)?;
    apply(&tape, obj, params, opt, E_PREFIX, &stats)?;
    Ok(scalar(&tape, ce))
}

/// One full step: D, then G, then E (or the classifier alone for the
/// baseline), each on fresh forwards. Numerical failures carry the step,
/// the losses seen so far and the largest gradient.
pub fn train_step<T: Element>(
    cfg: &TrainConfig,
    params: &mut ParamStore<T>,
    opts: &mut Optimizers<T>,
    batch: &Batch<T>,
    step: u64,
) -> Result<StepMetrics> {
    let arch = &cfg.architecture;
    let w = &cfg.loss;
    let mut parts = LossParts::default();
    let mut run = |params: &mut ParamStore<T>, parts: &mut LossParts| -> Result<()> {
        if arch.is_baseline() {
            parts.expr_real = baseline_update(arch, w, params, &mut opts.e, batch)?;
            return Ok(());
        }
        let (opt_g, opt_d) = match (opts.g.as_mut(), opts.d.as_mut()) {
            (Some(g), Some(d)) => (g, d),
            _ => return Err(config("optimizer state for G and D is missing")),
        };
        parts.d = d_update(arch, w, params, opt_d, batch)?.0;
        let (adv, l1, _) = g_update(arch, w, params, opt_g, batch)?;
        parts.g_adv = adv;
        parts.l1 = l1;
        let (r, f, _) = e_update(arch, w, params, &mut opts.e, batch)?;
        parts.expr_real = r;
        parts.expr_fake = f;
        Ok(())
    };
    if let Err(e) = run(params, &mut parts) {
        if e.exit_code() != 3 {
            return Err(e);
        }
        return Err(Error::Numerical(format!(
            "step {step}: {e}; losses so far {parts:?}; max |grad| {:e}",
            params.max_abs_grad()
        )));
    }
    let lr = |o: &Option<AdamState<T>>| o.as_ref().map_or(0.0, |s| s.config.lr);
    Ok(StepMetrics {
        step,
        d_loss: parts.d,
        g_adv: parts.g_adv,
        l1: parts.l1,
        expr_real: parts.expr_real,
        expr_fake: parts.expr_fake,
        lr_g: lr(&opts.g),
        lr_d: lr(&opts.d),
        lr_e: opts.e.config.lr,
        wall_ms: 0,
    })
}

/// Generator L1 against `I_AE` in inference mode (no dropout, running
/// statistics), without touching any parameter.
pub fn eval_l1<T: Element>(arch: &Architecture, params: &ParamStore<T>, batch: &Batch<T>) -> Result<f64> {
    let (g, _, _) = gan(arch)?;
    let mut tape = Tape::new();
    let x = inputs(&mut tape, batch);
    let fake = {
        let mut f = Forward::new(&mut tape, params, false, false);
        g.forward(&mut f, x.i_an, x.i_se, None)?
    };
    let l1 = losses::l1_loss(&mut tape, fake, x.i_ae)?;
    Ok(scalar(&tape, l1))
}
