use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{config, Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: IndexMap<String, Vec<T>>,
    pub v: IndexMap<String, Vec<T>>,
}

impl<T: Element> AdamState<T> {
    /// Zeroed moments for every entry of `params` whose name has `prefix`.
    pub fn new(config: AdamConfig, params: &ParamStore<T>, prefix: &str) -> Self {
        let zeros: IndexMap<String, Vec<T>> = params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.clone(), vec![T::zero(); t.numel()]))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn cast<U: Element>(&self) -> AdamState<U> {
        let conv = |map: &IndexMap<String, Vec<T>>| {
            map.iter()
                .map(|(n, v)| (n.clone(), v.iter().map(|x| U::from_f64(x.as_f64())).collect()))
                .collect()
        };
        AdamState {
            config: self.config,
            step: self.step,
            m: conv(&self.m),
            v: conv(&self.v),
        }
    }
}

/// One bias-corrected Adam update of every parameter tracked by `state`,
/// using the gradients stored on the parameters (absent gradients count as
/// zero). A non-finite gradient aborts before anything is modified.
pub fn adam_step<T: Element>(params: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    for name in state.m.keys() {
        let t = params
            .get(name)
            .ok_or_else(|| config(format!("optimizer parameter `{name}` is missing")))?;
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let one = T::one();
    let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
    let lr = T::from_f64(c.lr);
    let eps = T::from_f64(c.eps);
    for ((name, m), v) in state.m.iter_mut().zip(state.v.values_mut()) {
        let p = params.get_mut(name).expect("checked above");
        let Some(g) = p.grad().map(<[T]>::to_vec) else {
            // Zero gradient: decay the moments, move by the remaining momentum.
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi *= b1;
                *vi *= b2;
                *w -= lr * (*mi / corr1) / ((*vi / corr2).sqrt() + eps);
            }
            continue;
        };
        for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * *gi;
            *vi = b2 * *vi + (one - b2) * *gi * *gi;
            *w -= lr * (*mi / corr1) / ((*vi / corr2).sqrt() + eps);
        }
    }
    Ok(())
}
