use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{BufferSpec, Forward, ParamKind, ParamSpec};
use crate::tensor::{Element, NormMode, Var};

use super::norm_buffers;

pub const PREFIX: &str = "E";

/// Residual expression classifier: a stride-2 3×3 stem, `stages` stages of
/// `blocks` basic blocks with widths doubling per stage (every stage after
/// the first halves the resolution), global average pooling and a linear
/// head producing `classes` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierDesc {
    pub in_channels: usize,
    pub base_width: usize,
    pub stages: usize,
    pub blocks: usize,
    pub classes: usize,
    pub norm: NormMode,
    /// Start the head at zero so the initial softmax is uniform.
    pub zero_init_head: bool,
}

impl ClassifierDesc {
    /// Classifier over a channel-concatenated image pair.
    pub fn desk(channels: usize, classes: usize) -> Self {
        Self {
            in_channels: 2 * channels,
            base_width: 16,
            stages: 4,
            blocks: 2,
            classes,
            norm: NormMode::Batch,
            zero_init_head: true,
        }
    }

    /// The same architecture on single images.
    pub fn baseline(channels: usize, classes: usize) -> Self {
        Self {
            in_channels: channels,
            ..Self::desk(channels, classes)
        }
    }

    pub fn micro(channels: usize, classes: usize) -> Self {
        Self {
            base_width: 2,
            stages: 2,
            blocks: 1,
            zero_init_head: false,
            ..Self::desk(channels, classes)
        }
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.stages == 0 || self.blocks == 0 {
            return Err(config(format!("classifier extents must be positive: {self:?}")));
        }
        if self.classes < 2 {
            return Err(config(format!("classifier needs at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    /// Input channels and stride of block `b` in stage `s`.
    fn block_io(&self, s: usize, b: usize) -> (usize, usize) {
        let cin = if b > 0 {
            self.width(s)
        } else if s == 0 {
            self.base_width
        } else {
            self.width(s - 1)
        };
        let stride = if s > 0 && b == 0 { 2 } else { 1 };
        (cin, stride)
    }

    pub fn param_specs(&self) -> (Vec<ParamSpec>, Vec<BufferSpec>) {
        let mut p = Vec::new();
        let mut b = Vec::new();
        let conv = |p: &mut Vec<ParamSpec>, b: &mut Vec<BufferSpec>, name: &str, cout, cin, k| {
            p.push(ParamSpec::new(format!("{name}.weight"), &[cout, cin, k, k], ParamKind::Weight));
            let n = format!("{name}.norm");
            p.push(ParamSpec::new(format!("{n}.gamma"), &[cout], ParamKind::Gamma));
            p.push(ParamSpec::new(format!("{n}.beta"), &[cout], ParamKind::Beta));
            b.extend(norm_buffers(self.norm, &n, cout));
        };
        conv(&mut p, &mut b, &format!("{PREFIX}.stem"), self.base_width, self.in_channels, 3);
        for s in 0..self.stages {
            for blk in 0..self.blocks {
                let (cin, stride) = self.block_io(s, blk);
                let w = self.width(s);
                let name = format!("{PREFIX}.s{s}b{blk}");
                conv(&mut p, &mut b, &format!("{name}.conv1"), w, cin, 3);
                conv(&mut p, &mut b, &format!("{name}.conv2"), w, w, 3);
                if stride != 1 || cin != w {
                    conv(&mut p, &mut b, &format!("{name}.down"), w, cin, 1);
                }
            }
        }
        let head_kind = if self.zero_init_head {
            ParamKind::ZeroWeight
        } else {
            ParamKind::Weight
        };
        let feat = self.width(self.stages - 1);
        p.push(ParamSpec::new(format!("{PREFIX}.head.weight"), &[feat, self.classes], head_kind));
        p.push(ParamSpec::new(format!("{PREFIX}.head.bias"), &[self.classes], ParamKind::Bias));
        (p, b)
    }

    pub fn param_count(&self) -> usize {
        let w0 = self.base_width;
        // Each convolution is followed by a normalization with 2·cout affine terms.
        let mut n = 9 * self.in_channels * w0 + 2 * w0;
        let mut cin = w0;
        for s in 0..self.stages {
            let w = w0 << s;
            // First block may change width or resolution and then needs a 1×1 projection.
            n += 9 * cin * w + 2 * w + 9 * w * w + 2 * w;
            if s > 0 || cin != w {
                n += cin * w + 2 * w;
            }
            n += (self.blocks - 1) * 2 * (9 * w * w + 2 * w);
            cin = w;
        }
        n + cin * self.classes + self.classes
    }

    /// Logits `[B, classes]` for an already concatenated input.
    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = f.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(config(format!(
                "classifier expects [B, {}, H, W], got {shape:?}",
                self.in_channels
            )));
        }
        let stem = format!("{PREFIX}.stem");
        let mut h = f.conv(&stem, x, 2, 1, false)?;
        h = f.norm(&format!("{stem}.norm"), h, self.norm)?;
        h = f.tape.relu(h);
        for s in 0..self.stages {
            for blk in 0..self.blocks {
                let (cin, stride) = self.block_io(s, blk);
                let name = format!("{PREFIX}.s{s}b{blk}");
                let mut y = f.conv(&format!("{name}.conv1"), h, stride, 1, false)?;
                y = f.norm(&format!("{name}.conv1.norm"), y, self.norm)?;
                y = f.tape.relu(y);
                y = f.conv(&format!("{name}.conv2"), y, 1, 1, false)?;
                y = f.norm(&format!("{name}.conv2.norm"), y, self.norm)?;
                let shortcut = if stride != 1 || cin != self.width(s) {
                    let d = f.conv(&format!("{name}.down"), h, stride, 0, false)?;
                    f.norm(&format!("{name}.down.norm"), d, self.norm)?
                } else {
                    h
                };
                let sum = f.tape.add(y, shortcut)?;
                h = f.tape.relu(sum);
            }
        }
        let pooled = f.tape.mean(h, &[2, 3])?;
        f.linear(&format!("{PREFIX}.head"), pooled)
    }

    /// Logits for the pair `(i_se, x)`, concatenated along channels.
    pub fn forward_pair<T: Element>(&self, f: &mut Forward<'_, T>, i_se: Var, x: Var) -> Result<Var> {
        if f.tape.shape(i_se) != f.tape.shape(x) {
            return Err(config(format!(
                "classifier pair differs in shape: {:?} vs {:?}",
                f.tape.shape(i_se),
                f.tape.shape(x)
            )));
        }
        let pair = f.tape.concat(&[i_se, x], 1)?;
        self.forward(f, pair)
    }
}
