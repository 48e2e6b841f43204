use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{BufferSpec, Forward, ParamKind, ParamSpec};
use crate::tensor::{Element, NormMode, Tensor, Var};

use super::norm_buffers;

pub const PREFIX: &str = "G";
const LEAK: f64 = 0.2;

/// U-Net generator: `depth` stride-2 encoder stages of width
/// `base_width·2^i`, a mirrored transposed-convolution decoder with skip
/// concatenation, and a tanh output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDesc {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub norm: NormMode,
    /// Dropout probability after each inner decoder stage (0 disables it).
    pub dropout: f64,
    /// Start the output layer at exactly zero, so the initial output is 0.
    pub zero_init_output: bool,
}

impl GeneratorDesc {
    pub fn desk(channels: usize) -> Self {
        Self {
            in_channels: 2 * channels,
            out_channels: channels,
            base_width: 16,
            depth: 4,
            norm: NormMode::Instance,
            dropout: 0.0,
            zero_init_output: true,
        }
    }

    /// Smallest useful instance, for gradient checks at 8×8.
    pub fn micro(channels: usize) -> Self {
        Self {
            base_width: 2,
            depth: 2,
            zero_init_output: false,
            ..Self::desk(channels)
        }
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width << (stage - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 || self.depth == 0 {
            return Err(config(format!("generator extents must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config(format!("generator dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn param_specs(&self) -> (Vec<ParamSpec>, Vec<BufferSpec>) {
        let mut p = Vec::new();
        let mut b = Vec::new();
        let l = self.depth;
        let norm = |p: &mut Vec<ParamSpec>, b: &mut Vec<BufferSpec>, name: String, c: usize| {
            p.push(ParamSpec::new(format!("{name}.gamma"), &[c], ParamKind::Gamma));
            p.push(ParamSpec::new(format!("{name}.beta"), &[c], ParamKind::Beta));
            b.extend(norm_buffers(self.norm, &name, c));
        };
        for i in 1..=l {
            let cin = if i == 1 { self.in_channels } else { self.width(i - 1) };
            let name = format!("{PREFIX}.enc{i}");
            p.push(ParamSpec::new(
                format!("{name}.weight"),
                &[self.width(i), cin, 4, 4],
                ParamKind::Weight,
            ));
            if i == 1 || i == l {
                p.push(ParamSpec::new(format!("{name}.bias"), &[self.width(i)], ParamKind::Bias));
            } else {
                norm(&mut p, &mut b, format!("{name}.norm"), self.width(i));
            }
        }
        for k in (2..=l).rev() {
            let cin = if k == l { self.width(l) } else { 2 * self.width(k) };
            let name = format!("{PREFIX}.dec{k}");
            p.push(ParamSpec::new(
                format!("{name}.weight"),
                &[cin, self.width(k - 1), 4, 4],
                ParamKind::Weight,
            ));
            norm(&mut p, &mut b, format!("{name}.norm"), self.width(k - 1));
        }
        let cin = if l == 1 { self.width(1) } else { 2 * self.width(1) };
        let out_kind = if self.zero_init_output {
            ParamKind::ZeroWeight
        } else {
            ParamKind::Weight
        };
        p.push(ParamSpec::new(
            format!("{PREFIX}.out.weight"),
            &[cin, self.out_channels, 4, 4],
            out_kind,
        ));
        p.push(ParamSpec::new(format!("{PREFIX}.out.bias"), &[self.out_channels], ParamKind::Bias));
        (p, b)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (f, l) = (self.base_width, self.depth);
        let w = |i: usize| f << (i - 1);
        // Encoder: first and innermost stages carry a bias, others a norm.
        let mut n = 16 * self.in_channels * w(1) + w(1);
        for i in 2..=l {
            n += 16 * w(i - 1) * w(i) + if i == l { w(i) } else { 2 * w(i) };
        }
        if l > 1 {
            n += 16 * w(l) * w(l - 1) + 2 * w(l - 1);
            for k in 2..l {
                n += 16 * 2 * w(k) * w(k - 1) + 2 * w(k - 1);
            }
        }
        let last_in = if l == 1 { w(1) } else { 2 * w(1) };
        n + 16 * last_in * self.out_channels + self.out_channels
    }

    /// `Ĩ = G(i_an ‖ i_se)`; the result has the shape of `i_se` and lies in
    /// (−1, 1). `dropout_seed` enables decoder dropout when the descriptor
    /// asks for it.
    pub fn forward<T: Element>(
        &self,
        f: &mut Forward<'_, T>,
        i_an: Var,
        i_se: Var,
        dropout_seed: Option<u64>,
    ) -> Result<Var> {
        let shape = f.tape.shape(i_se).to_vec();
        if f.tape.shape(i_an) != shape.as_slice() {
            return Err(config(format!(
                "generator inputs differ in shape: {:?} vs {:?}",
                f.tape.shape(i_an),
                shape
            )));
        }
        let d = self.divisor();
        if shape.len() != 4 || shape[2] % d != 0 || shape[3] % d != 0 || shape[2] < d {
            return Err(config(format!(
                "generator input {shape:?} must be 4-D with spatial extents divisible by {d}"
            )));
        }
        let x = f.tape.concat(&[i_an, i_se], 1)?;
        let l = self.depth;
        let mut skips = Vec::with_capacity(l);
        let mut h = f.conv(&format!("{PREFIX}.enc1"), x, 2, 1, true)?;
        skips.push(h);
        for i in 2..=l {
            let name = format!("{PREFIX}.enc{i}");
            let a = f.tape.leaky_relu(h, LEAK);
            h = f.conv(&name, a, 2, 1, i == l)?;
            if i < l {
                h = f.norm(&format!("{name}.norm"), h, self.norm)?;
            }
            skips.push(h);
        }
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        for k in (2..=l).rev() {
            let name = format!("{PREFIX}.dec{k}");
            let a = f.tape.relu(h);
            let mut y = f.conv_transpose(&name, a, 2, 1, false)?;
            y = f.norm(&format!("{name}.norm"), y, self.norm)?;
            if let (Some(rng), true) = (rng.as_mut(), self.dropout > 0.0) {
                y = self.dropout_mask(f, y, rng)?;
            }
            h = f.tape.concat(&[y, skips[k - 2]], 1)?;
        }
        let a = f.tape.relu(h);
        let y = f.conv_transpose(&format!("{PREFIX}.out"), a, 2, 1, true)?;
        Ok(f.tape.tanh(y))
    }

    fn dropout_mask<T: Element>(&self, f: &mut Forward<'_, T>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        let shape = f.tape.shape(y).to_vec();
        let keep = 1.0 - self.dropout;
        let mask: Vec<T> = (0..shape.iter().product::<usize>())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    T::from_f64(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        let m = f.tape.constant(Tensor::new(shape, mask)?);
        Ok(f.tape.mul(y, m)?)
    }
}
