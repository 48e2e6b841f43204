use super::ParamStore;
use crate::error::{config, Result};
use crate::tensor::{Element, NormMode, Tape, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const RUNNING_MOMENTUM: f64 = 0.1;

/// Records one network's forward pass on a tape, pulling named parameters
/// out of a store.
///
/// With `trainable == false` the parameters enter the tape as constants, so
/// a loss can flow through a network without producing gradients for it.
/// `training` selects batch statistics for batch normalization; the batch
/// statistics seen are collected in [`Forward::stats`].
pub struct Forward<'a, T> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    trainable: bool,
    training: bool,
    pub stats: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<'a, T: Element> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, trainable: bool, training: bool) -> Self {
        Self {
            tape,
            store,
            trainable,
            training,
            stats: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let t = self
            .store
            .get(name)
            .ok_or_else(|| config(format!("missing parameter `{name}`")))?;
        Ok(self.tape.param(name, t, self.trainable))
    }

    pub fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = if bias { Some(self.param(&format!("{name}.bias"))?) } else { None };
        Ok(self.tape.conv2d(x, w, b, stride, pad)?)
    }

    pub fn conv_transpose(&mut self, name: &str, x: Var, stride: usize, pad: usize, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = if bias { Some(self.param(&format!("{name}.bias"))?) } else { None };
        Ok(self.tape.conv_transpose2d(x, w, b, stride, pad)?)
    }

    pub fn norm(&mut self, name: &str, x: Var, mode: NormMode) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let running = if mode == NormMode::Batch && !self.training {
            let mean = self.buffer(&format!("{name}.running_mean"))?;
            let var = self.buffer(&format!("{name}.running_var"))?;
            Some((mean, var))
        } else {
            None
        };
        let out = self.tape.norm2d(x, gamma, beta, mode, NORM_EPS, running)?;
        if let (Some(m), Some(v)) = (out.batch_mean, out.batch_var) {
            if mode == NormMode::Batch && self.training {
                self.stats.push((name.to_string(), m, v));
            }
        }
        Ok(out.out)
    }

    fn buffer(&self, name: &str) -> Result<&'a [T]> {
        self.store
            .buffer(name)
            .map(|t| t.data())
            .ok_or_else(|| config(format!("missing buffer `{name}`")))
    }

    /// `x: [B, in]` times `weight: [in, out]` plus `bias: [out]`.
    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_channel_bias(y, b)?)
    }
}

impl<T: Element> ParamStore<T> {
    /// Folds batch statistics into the running estimates:
    /// `running ← (1 − m)·running + m·batch` with momentum 0.1.
    pub fn apply_running_stats(&mut self, stats: &[(String, Vec<T>, Vec<T>)]) -> Result<()> {
        let m = T::from_f64(RUNNING_MOMENTUM);
        let keep = T::one() - m;
        for (name, mean, var) in stats {
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                let key = format!("{name}.{suffix}");
                let buf = self
                    .buffer_mut(&key)
                    .ok_or_else(|| config(format!("missing buffer `{key}`")))?;
                for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * *b;
                }
            }
        }
        Ok(())
    }
}
