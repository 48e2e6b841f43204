use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{BufferSpec, Forward, ParamKind, ParamSpec};
use crate::tensor::{Element, NormMode, Var};

use super::norm_buffers;

pub const PREFIX: &str = "D";
const LEAK: f64 = 0.2;

/// Patch discriminator over channel-concatenated `(I_AN, I_SE, X)` tuples:
/// `stages` stride-2 convolutions followed by two stride-1 4×4 layers. The
/// output is a map of raw logits, one per receptive-field patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorDesc {
    pub in_channels: usize,
    pub base_width: usize,
    pub stages: usize,
    pub norm: NormMode,
}

impl DiscriminatorDesc {
    pub fn desk(channels: usize) -> Self {
        Self {
            in_channels: 3 * channels,
            base_width: 16,
            stages: 3,
            norm: NormMode::Instance,
        }
    }

    pub fn micro(channels: usize) -> Self {
        Self {
            base_width: 2,
            stages: 1,
            ..Self::desk(channels)
        }
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width << (stage - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.stages == 0 {
            return Err(config(format!("discriminator extents must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Side of the logit map for a square input of side `side`.
    pub fn output_extent(&self, side: usize) -> Option<usize> {
        let mut h = side;
        for _ in 0..self.stages {
            // k4 s2 p1
            h = (h + 2).checked_sub(4)? / 2 + 1;
        }
        // Two k4 s1 p1 layers each shrink the map by one.
        h.checked_sub(2).filter(|&e| e > 0)
    }

    pub fn param_specs(&self) -> (Vec<ParamSpec>, Vec<BufferSpec>) {
        let mut p = Vec::new();
        let mut b = Vec::new();
        let p_stages = self.stages;
        for i in 1..=p_stages + 1 {
            let cin = if i == 1 { self.in_channels } else { self.width(i - 1) };
            let name = format!("{PREFIX}.conv{i}");
            p.push(ParamSpec::new(
                format!("{name}.weight"),
                &[self.width(i), cin, 4, 4],
                ParamKind::Weight,
            ));
            if i == 1 {
                p.push(ParamSpec::new(format!("{name}.bias"), &[self.width(i)], ParamKind::Bias));
            } else {
                let n = format!("{name}.norm");
                p.push(ParamSpec::new(format!("{n}.gamma"), &[self.width(i)], ParamKind::Gamma));
                p.push(ParamSpec::new(format!("{n}.beta"), &[self.width(i)], ParamKind::Beta));
                b.extend(norm_buffers(self.norm, &n, self.width(i)));
            }
        }
        let name = format!("{PREFIX}.out");
        p.push(ParamSpec::new(
            format!("{name}.weight"),
            &[1, self.width(p_stages + 1), 4, 4],
            ParamKind::Weight,
        ));
        p.push(ParamSpec::new(format!("{name}.bias"), &[1], ParamKind::Bias));
        (p, b)
    }

    pub fn param_count(&self) -> usize {
        let f = self.base_width;
        let mut n = 16 * self.in_channels * f + f;
        let mut c = f;
        for _ in 0..self.stages {
            n += 16 * c * (2 * c) + 2 * (2 * c);
            c *= 2;
        }
        n + 16 * c + 1
    }

    /// Logit map `[B, 1, h, w]` for the tuple `(i_an, i_se, x)`.
    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, i_an: Var, i_se: Var, x: Var) -> Result<Var> {
        let shape = f.tape.shape(i_an).to_vec();
        for v in [i_se, x] {
            if f.tape.shape(v) != shape.as_slice() {
                return Err(config(format!(
                    "discriminator tuple members differ in shape: {:?} vs {:?}",
                    shape,
                    f.tape.shape(v)
                )));
            }
        }
        let mut h = f.tape.concat(&[i_an, i_se, x], 1)?;
        for i in 1..=self.stages + 1 {
            let name = format!("{PREFIX}.conv{i}");
            let stride = if i <= self.stages { 2 } else { 1 };
            h = f.conv(&name, h, stride, 1, i == 1)?;
            if i > 1 {
                h = f.norm(&format!("{name}.norm"), h, self.norm)?;
            }
            h = f.tape.leaky_relu(h, LEAK);
        }
        f.conv(&format!("{PREFIX}.out"), h, 1, 1, true)
    }
}
