//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OpTag, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Inputs with more elements than this are checked on a seeded sample.
    pub max_elements_per_input: usize,
    pub seed: u64,
    /// Deliberately corrupt one backward rule (mutation testing of the checker).
    pub fault: Option<OpTag>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_elements_per_input: 48,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub checks: Vec<ElementCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub value: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    /// Analytic gradient entries that were checked for `input`, by element index.
    pub fn analytic(&self, input: usize) -> Vec<(usize, f64)> {
        self.checks
            .iter()
            .filter(|c| c.input == input)
            .map(|c| (c.index, c.analytic))
            .collect()
    }
}

fn evaluate<F, E>(f: &F, inputs: &[Tensor<f64>], fault: Option<OpTag>) -> Result<(Tape<f64>, Var, Vec<Var>), E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    if let Some(tag) = fault {
        tape.inject_fault(tag);
    }
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::Invalid {
            op: "gradcheck",
            reason: format!("function must return a scalar, got {:?}", tape.shape(out)),
        }
        .into());
    }
    Ok((tape, out, vars))
}

fn value_at<F, E>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let (tape, out, _) = evaluate(f, inputs, None)?;
    Ok(tape.value(out).item())
}

/// Compares tape gradients of the scalar function `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h` for every (or a seeded sample of
/// every) input element.
///
/// The relative error of an entry is `|a − n| / max(|a|, |n|, 1e-6·max(1,|f|))`;
/// the floor is the scale of finite-difference round-off, so entries that are
/// numerically zero do not produce spurious failures.
pub fn gradcheck<F, E>(f: F, inputs: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradcheckReport, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let (tape, out, vars) = evaluate(&f, inputs, cfg.fault)?;
    let value = tape.value(out).item();
    let again = value_at(&f, inputs)?;
    if value.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministic {
            first: value,
            second: again,
        }
        .into());
    }
    let grads = tape.backward(out)?;
    let floor = 1e-6 * value.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for (input, (tensor, var)) in inputs.iter().zip(&vars).enumerate() {
        let n = tensor.numel();
        let analytic = grads.get(*var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut indices: Vec<usize> = if n > cfg.max_elements_per_input {
            sample(&mut rng, n, cfg.max_elements_per_input).into_vec()
        } else {
            (0..n).collect()
        };
        indices.sort_unstable();
        let mut probe = inputs.to_vec();
        for index in indices {
            let orig = tensor.data()[index];
            probe[input].data_mut()[index] = orig + cfg.step;
            let plus = value_at(&f, &probe)?;
            probe[input].data_mut()[index] = orig - cfg.step;
            let minus = value_at(&f, &probe)?;
            probe[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[index];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel_error = max_rel_error.max(rel_error);
            checks.push(ElementCheck {
                input,
                index,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    Ok(GradcheckReport {
        checks,
        max_rel_error,
        tol: cfg.tol,
        value,
    })
}
