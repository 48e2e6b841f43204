//! Adversarial, reconstruction and expression losses, and their weighting
//! into one objective per network.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::{Element, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Adversarial term.
    pub lambda1: f64,
    /// L1 reconstruction of the average expressive face.
    pub lambda2: f64,
    /// Expression cross-entropy.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 200.0,
            lambda3: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(config(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn check_finite<T: Element>(tape: &Tape<T>, v: Var, what: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} contains NaN or infinite values")))
    }
}

/// `BCE(real, 1) + BCE(fake, 0)`, each a mean over batch and patches.
/// `fake` must come from a generator output that was detached.
pub fn d_loss<T: Element>(tape: &mut Tape<T>, logits_real: Var, logits_fake: Var) -> Result<Var> {
    check_finite(tape, logits_real, "real logits")?;
    check_finite(tape, logits_fake, "fake logits")?;
    let r = tape.bce_with_logits(logits_real, 1.0)?;
    let f = tape.bce_with_logits(logits_fake, 0.0)?;
    Ok(tape.add(r, f)?)
}

/// Non-saturating generator term `BCE(fake, 1)`.
pub fn g_adv_loss<T: Element>(tape: &mut Tape<T>, logits_fake: Var) -> Result<Var> {
    check_finite(tape, logits_fake, "fake logits")?;
    Ok(tape.bce_with_logits(logits_fake, 1.0)?)
}

/// Mean absolute difference.
pub fn l1_loss<T: Element>(tape: &mut Tape<T>, gen: Var, target: Var) -> Result<Var> {
    let d = tape.sub(gen, target)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a)?)
}

/// Softmax cross-entropy of the real pair plus that of the fake pair.
pub fn expr_loss<T: Element>(tape: &mut Tape<T>, logits_real: Var, logits_fake: Var, labels: &[usize]) -> Result<Var> {
    let r = cross_entropy(tape, logits_real, labels)?;
    let f = cross_entropy(tape, logits_fake, labels)?;
    Ok(tape.add(r, f)?)
}

/// Mean softmax cross-entropy of one batch of logits.
pub fn cross_entropy<T: Element>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    check_finite(tape, logits, "classifier logits")?;
    Ok(tape.softmax_cross_entropy(logits, labels)?)
}

/// `λ1·g_adv + λ2·l1 + λ3·ce_fake`.
pub fn g_objective<T: Element>(tape: &mut Tape<T>, w: &LossWeights, g_adv: Var, l1: Var, ce_fake: Var) -> Result<Var> {
    w.validate()?;
    let a = tape.scale(g_adv, w.lambda1);
    let b = tape.scale(l1, w.lambda2);
    let c = tape.scale(ce_fake, w.lambda3);
    let ab = tape.add(a, b)?;
    Ok(tape.add(ab, c)?)
}

/// `λ1·d`.
pub fn d_objective<T: Element>(tape: &mut Tape<T>, w: &LossWeights, d: Var) -> Result<Var> {
    w.validate()?;
    Ok(tape.scale(d, w.lambda1))
}

/// `λ3·expr` (both pairs).
pub fn e_objective<T: Element>(tape: &mut Tape<T>, w: &LossWeights, expr: Var) -> Result<Var> {
    w.validate()?;
    Ok(tape.scale(expr, w.lambda3))
}

/// Scalar loss values of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub d: f64,
    pub g_adv: f64,
    pub l1: f64,
    pub expr_real: f64,
    pub expr_fake: f64,
}

/// Per-network objective values for given loss parts.
pub fn combined(parts: &LossParts, w: &LossWeights) -> Result<(f64, f64, f64)> {
    w.validate()?;
    let all = [parts.d, parts.g_adv, parts.l1, parts.expr_real, parts.expr_fake];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite loss parts {parts:?}")));
    }
    let g = w.lambda1 * parts.g_adv + w.lambda2 * parts.l1 + w.lambda3 * parts.expr_fake;
    let d = w.lambda1 * parts.d;
    let e = w.lambda3 * (parts.expr_real + parts.expr_fake);
    Ok((g, d, e))
}
