use std::fmt;
use std::str::FromStr;

use super::kernels::{self, ConvGeom};
use super::{invalid, Element, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
}

impl Elementwise {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

impl FromStr for Elementwise {
    type Err = TensorError;

    /// Accepts `add`, `sub`, `mul`, `neg`, `abs`, `tanh`, `sigmoid`, `relu`,
    /// `leaky_relu` and `leaky_relu(<slope>)`.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "add" => Elementwise::Add,
            "sub" => Elementwise::Sub,
            "mul" => Elementwise::Mul,
            "neg" => Elementwise::Neg,
            "abs" => Elementwise::Abs,
            "tanh" => Elementwise::Tanh,
            "sigmoid" => Elementwise::Sigmoid,
            "relu" => Elementwise::Relu,
            "leaky_relu" => Elementwise::LeakyRelu(Self::DEFAULT_LEAKY_SLOPE),
            other => {
                let slope = other
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| TensorError::UnknownOp(other.to_string()))?;
                Elementwise::LeakyRelu(slope)
            }
        };
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Batch,
    Instance,
}

/// Coarse operation kind, used for fault injection and per-op reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu,
    Scale,
    Matmul,
    Conv2d,
    ConvTranspose2d,
    Norm2d,
    ChannelBias,
    Concat,
    Slice,
    Reshape,
    UpsampleNearest,
    AvgPool,
    Mean,
    Sum,
    PadZero,
    BceWithLogits,
    SoftmaxCrossEntropy,
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpTag::Leaf => "leaf",
            OpTag::Add => "add",
            OpTag::Sub => "sub",
            OpTag::Mul => "mul",
            OpTag::Neg => "neg",
            OpTag::Abs => "abs",
            OpTag::Tanh => "tanh",
            OpTag::Sigmoid => "sigmoid",
            OpTag::Relu => "relu",
            OpTag::LeakyRelu => "leaky_relu",
            OpTag::Scale => "scale",
            OpTag::Matmul => "matmul",
            OpTag::Conv2d => "conv2d",
            OpTag::ConvTranspose2d => "conv_transpose2d",
            OpTag::Norm2d => "norm2d",
            OpTag::ChannelBias => "channel_bias",
            OpTag::Concat => "concat",
            OpTag::Slice => "slice",
            OpTag::Reshape => "reshape",
            OpTag::UpsampleNearest => "upsample_nearest",
            OpTag::AvgPool => "avgpool",
            OpTag::Mean => "mean",
            OpTag::Sum => "sum",
            OpTag::PadZero => "pad_zero",
            OpTag::BceWithLogits => "bce_with_logits",
            OpTag::SoftmaxCrossEntropy => "softmax_cross_entropy",
        };
        f.write_str(s)
    }
}

impl FromStr for OpTag {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [OpTag; 26] = [
            OpTag::Leaf,
            OpTag::Add,
            OpTag::Sub,
            OpTag::Mul,
            OpTag::Neg,
            OpTag::Abs,
            OpTag::Tanh,
            OpTag::Sigmoid,
            OpTag::Relu,
            OpTag::LeakyRelu,
            OpTag::Scale,
            OpTag::Matmul,
            OpTag::Conv2d,
            OpTag::ConvTranspose2d,
            OpTag::Norm2d,
            OpTag::ChannelBias,
            OpTag::Concat,
            OpTag::Slice,
            OpTag::Reshape,
            OpTag::UpsampleNearest,
            OpTag::AvgPool,
            OpTag::Mean,
            OpTag::Sum,
            OpTag::PadZero,
            OpTag::BceWithLogits,
            OpTag::SoftmaxCrossEntropy,
        ];
        ALL.into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| TensorError::UnknownOp(s.to_string()))
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Unary {
        kind: Elementwise,
        x: usize,
    },
    Binary {
        kind: Elementwise,
        a: usize,
        b: usize,
        b_scalar: bool,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    Norm2d {
        x: usize,
        gamma: usize,
        beta: usize,
        batch_mode: bool,
        dims: (usize, usize, usize),
        /// Per normalization group: mean and 1/sqrt(var + eps).
        mean: Vec<T>,
        inv_std: Vec<T>,
        /// Inference with tracked statistics: normalization constants are fixed.
        frozen: bool,
    },
    ChannelBias {
        x: usize,
        bias: usize,
        dims: (usize, usize, usize),
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        inner: usize,
        extents: Vec<usize>,
    },
    Slice {
        x: usize,
        outer: usize,
        inner: usize,
        extent: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: usize,
    },
    Upsample {
        x: usize,
        factor: usize,
    },
    AvgPool {
        x: usize,
        k: usize,
    },
    Mean {
        x: usize,
        map: Vec<usize>,
        count: usize,
    },
    Sum {
        x: usize,
    },
    PadZero {
        x: usize,
        pad: usize,
    },
    BceWithLogits {
        x: usize,
        target: T,
    },
    SoftmaxCrossEntropy {
        x: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::Unary { kind, .. } | Op::Binary { kind, .. } => match kind {
                Elementwise::Add => OpTag::Add,
                Elementwise::Sub => OpTag::Sub,
                Elementwise::Mul => OpTag::Mul,
                Elementwise::Neg => OpTag::Neg,
                Elementwise::Abs => OpTag::Abs,
                Elementwise::Tanh => OpTag::Tanh,
                Elementwise::Sigmoid => OpTag::Sigmoid,
                Elementwise::Relu => OpTag::Relu,
                Elementwise::LeakyRelu(_) => OpTag::LeakyRelu,
            },
            Op::Scale { .. } => OpTag::Scale,
            Op::Matmul { .. } => OpTag::Matmul,
            Op::Conv2d { .. } => OpTag::Conv2d,
            Op::ConvTranspose2d { .. } => OpTag::ConvTranspose2d,
            Op::Norm2d { .. } => OpTag::Norm2d,
            Op::ChannelBias { .. } => OpTag::ChannelBias,
            Op::Concat { .. } => OpTag::Concat,
            Op::Slice { .. } => OpTag::Slice,
            Op::Reshape { .. } => OpTag::Reshape,
            Op::Upsample { .. } => OpTag::UpsampleNearest,
            Op::AvgPool { .. } => OpTag::AvgPool,
            Op::Mean { .. } => OpTag::Mean,
            Op::Sum { .. } => OpTag::Sum,
            Op::PadZero { .. } => OpTag::PadZero,
            Op::BceWithLogits { .. } => OpTag::BceWithLogits,
            Op::SoftmaxCrossEntropy { .. } => OpTag::SoftmaxCrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Output of [`Tape::norm2d`]. In training batch mode the batch statistics
/// are returned so the caller can update running estimates.
#[derive(Debug)]
pub struct NormOutput<T> {
    pub out: Var,
    pub batch_mean: Option<Vec<T>>,
    /// Unbiased per-channel variance of the batch.
    pub batch_var: Option<Vec<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Record of operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every operand of node `k` has
/// an index below `k`.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    fault: Option<OpTag>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of every op with this tag (gradients are
    /// scaled by 1.01). Exists so gradient checks can be shown to catch faults.
    pub fn inject_fault(&mut self, tag: OpTag) {
        self.fault = Some(tag);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let value = Tensor {
            requires_grad: false,
            grad: None,
            ..value
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn raw(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            op,
            needs_grad,
        )
    }

    /// Records a leaf; gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Records a named parameter leaf. Trainable parameters are listed in
    /// [`Tape::params`] so their gradients can be routed back to a store.
    pub fn param(&mut self, name: &str, tensor: &Tensor<T>, trainable: bool) -> Var {
        let v = self.push(tensor.clone(), Op::Leaf, trainable);
        if trainable {
            self.params.push((name.to_string(), v));
        }
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tag(&self, v: Var) -> OpTag {
        self.nodes[v.0].op.tag()
    }

    fn data(&self, v: usize) -> &[T] {
        &self.nodes[v].value.data
    }

    // ---------------------------------------------------------------- elementwise

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => Ok(self.unary(kind, a)),
            (true, None) => Err(invalid("elementwise", format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(invalid("elementwise", format!("{kind:?} takes one operand"))),
        }
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let b_scalar = self.value(b).numel() == 1 && sa != sb;
        if sa != sb && !b_scalar {
            return Err(TensorError::ShapeMismatch {
                op: "elementwise",
                left: sa,
                right: sb,
            });
        }
        let av = self.data(a.0);
        let bv = self.data(b.0);
        let f = |x: T, y: T| match kind {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            _ => x * y,
        };
        let data: Vec<T> = if b_scalar {
            let y = bv[0];
            av.iter().map(|&x| f(x, y)).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.raw(
            sa,
            data,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
                b_scalar,
            },
            needs,
        ))
    }

    fn unary(&mut self, kind: Elementwise, x: Var) -> Var {
        let xv = self.data(x.0);
        let data: Vec<T> = match kind {
            Elementwise::Neg => xv.iter().map(|&v| -v).collect(),
            Elementwise::Abs => xv.iter().map(|&v| v.abs()).collect(),
            Elementwise::Tanh => xv.iter().map(|&v| v.tanh()).collect(),
            Elementwise::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            Elementwise::Relu => xv.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            Elementwise::LeakyRelu(s) => {
                let s = T::from_f64(s);
                xv.iter().map(|&v| if v > T::zero() { v } else { v * s }).collect()
            }
            _ => unreachable!("binary kind in unary"),
        };
        let shape = self.shape(x).to_vec();
        let needs = self.needs_grad(x);
        self.raw(shape, data, Op::Unary { kind, x: x.0 }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Neg, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Abs, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Elementwise::LeakyRelu(slope), x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let data = self.data(x.0).iter().map(|&v| v * f).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs_grad(x);
        self.raw(shape, data, Op::Scale { x: x.0, factor: f }, needs)
    }

    // ---------------------------------------------------------------- linear algebra

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a.0), false, self.data(b.0), false, &mut out, false);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.raw(
            vec![m, n],
            out,
            Op::Matmul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        transposed: bool,
    ) -> Result<ConvGeom> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if stride == 0 {
            return Err(invalid(op, "stride must be positive"));
        }
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op,
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        if xs[1] != ws[0] && transposed || xs[1] != ws[1] && !transposed {
            return Err(TensorError::Axis {
                op,
                axis: 1,
                detail: format!("input has {} channels, weight {:?}", xs[1], ws),
            });
        }
        let (b, h, w_) = (xs[0], xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        let out_ch = if transposed { ws[1] } else { ws[0] };
        if let Some(bias) = bias {
            if self.shape(bias) != [out_ch] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: vec![out_ch],
                    right: self.shape(bias).to_vec(),
                });
            }
        }
        if transposed {
            let ho = ((h - 1) * stride + kh)
                .checked_sub(2 * pad)
                .filter(|&v| v > 0)
                .ok_or_else(|| invalid(op, "padding exceeds output extent"))?;
            let wo = ((w_ - 1) * stride + kw)
                .checked_sub(2 * pad)
                .filter(|&v| v > 0)
                .ok_or_else(|| invalid(op, "padding exceeds output extent"))?;
            Ok(ConvGeom {
                b,
                cin: out_ch,
                h: ho,
                w: wo,
                cout: xs[1],
                kh,
                kw,
                stride,
                pad,
                ho: h,
                wo: w_,
            })
        } else {
            if h + 2 * pad < kh {
                return Err(TensorError::Axis {
                    op,
                    axis: 2,
                    detail: format!("padded height {} smaller than kernel {kh}", h + 2 * pad),
                });
            }
            if w_ + 2 * pad < kw {
                return Err(TensorError::Axis {
                    op,
                    axis: 3,
                    detail: format!("padded width {} smaller than kernel {kw}", w_ + 2 * pad),
                });
            }
            Ok(ConvGeom {
                b,
                cin: xs[1],
                h,
                w: w_,
                cout: out_ch,
                kh,
                kw,
                stride,
                pad,
                ho: (h + 2 * pad - kh) / stride + 1,
                wo: (w_ + 2 * pad - kw) / stride + 1,
            })
        }
    }

    /// Cross-correlation of `x: [B,Cin,H,W]` with `w: [Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, w, bias, stride, pad, false)?;
        let out = kernels::conv2d_forward(
            self.data(x.0),
            self.data(w.0),
            bias.map(|b| self.data(b.0)),
            &geom,
        );
        let needs = self.needs_grad(x) || self.needs_grad(w) || bias.is_some_and(|b| self.needs_grad(b));
        Ok(self.raw(
            vec![geom.b, geom.cout, geom.ho, geom.wo],
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                geom,
            },
            needs,
        ))
    }

    /// Transposed convolution of `x: [B,Cin,H,W]` with `w: [Cin,Cout,kh,kw]`;
    /// the adjoint of [`Tape::conv2d`] with respect to its input.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom("conv_transpose2d", x, w, bias, stride, pad, true)?;
        let out = kernels::conv_transpose2d_forward(
            self.data(x.0),
            self.data(w.0),
            bias.map(|b| self.data(b.0)),
            &geom,
        );
        let needs = self.needs_grad(x) || self.needs_grad(w) || bias.is_some_and(|b| self.needs_grad(b));
        Ok(self.raw(
            vec![geom.b, geom.cin, geom.h, geom.w],
            out,
            Op::ConvTranspose2d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                geom,
            },
            needs,
        ))
    }

    /// Per-channel normalization followed by the affine `gamma`, `beta`.
    ///
    /// `running` supplies tracked (mean, variance) for inference in batch
    /// mode; when it is `None` the statistics of `x` are used.
    pub fn norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        eps: f64,
        running: Option<(&[T], &[T])>,
    ) -> Result<NormOutput<T>> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(invalid("norm2d", format!("expected a 4-D input, got {xs:?}")));
        }
        let (b, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(TensorError::Axis {
                    op: "norm2d",
                    axis: 1,
                    detail: format!("{name} has shape {:?}, input has {c} channels", self.shape(v)),
                });
            }
        }
        let batch_mode = mode == NormMode::Batch;
        if running.is_some() && !batch_mode {
            return Err(invalid("norm2d", "running statistics only apply to batch mode"));
        }
        let population = if batch_mode { b * p } else { p };
        if batch_mode && population < 2 && running.is_none() {
            return Err(invalid(
                "norm2d",
                "batch mode needs at least 2 values per channel; use instance mode",
            ));
        }
        let groups = kernels::norm_groups(batch_mode, b, c, p);
        let xv = self.data(x.0);
        let eps_t = T::from_f64(eps);
        let n = T::from_f64(population as f64);
        let mut mean = Vec::with_capacity(groups.len());
        let mut inv_std = Vec::with_capacity(groups.len());
        let mut var_unbiased = Vec::new();
        if let Some((rm, rv)) = running {
            if rm.len() != c || rv.len() != c {
                return Err(invalid("norm2d", "running statistics length differs from channels"));
            }
            for ci in 0..c {
                mean.push(rm[ci]);
                inv_std.push(T::one() / (rv[ci] + eps_t).sqrt());
            }
        } else {
            for offsets in &groups {
                let mut s = T::zero();
                for &o in offsets {
                    for v in &xv[o..o + p] {
                        s += *v;
                    }
                }
                let mu = s / n;
                let mut q = T::zero();
                for &o in offsets {
                    for v in &xv[o..o + p] {
                        let d = *v - mu;
                        q += d * d;
                    }
                }
                let var = q / n;
                mean.push(mu);
                inv_std.push(T::one() / (var + eps_t).sqrt());
                if batch_mode {
                    let denom = T::from_f64((population.max(2) - 1) as f64);
                    var_unbiased.push(q / denom);
                }
            }
        }
        let gv = self.data(gamma.0);
        let bv = self.data(beta.0);
        let mut out = vec![T::zero(); xv.len()];
        for (gi, offsets) in groups.iter().enumerate() {
            let ch = if batch_mode { gi } else { gi % c };
            let (mu, is, ga, be) = (mean[gi], inv_std[gi], gv[ch], bv[ch]);
            for &o in offsets {
                for (dst, src) in out[o..o + p].iter_mut().zip(&xv[o..o + p]) {
                    *dst = ga * (*src - mu) * is + be;
                }
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let (batch_mean, batch_var) = if batch_mode && running.is_none() {
            (Some(mean.clone()), Some(var_unbiased))
        } else {
            (None, None)
        };
        let out = self.raw(
            xs,
            out,
            Op::Norm2d {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                batch_mode,
                dims: (b, c, p),
                mean,
                inv_std,
                frozen: running.is_some(),
            },
            needs,
        );
        Ok(NormOutput {
            out,
            batch_mean,
            batch_var,
        })
    }

    /// Adds `bias: [C]` along axis 1 of `x: [B, C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(bias) != [xs[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                left: xs,
                right: self.shape(bias).to_vec(),
            });
        }
        let (b, c) = (xs[0], xs[1]);
        let p = xs[2..].iter().product::<usize>();
        let mut out = self.data(x.0).to_vec();
        kernels::add_channel_bias(&mut out, self.data(bias.0), b, c, p);
        let needs = self.needs_grad(x) || self.needs_grad(bias);
        Ok(self.raw(
            xs,
            out,
            Op::ChannelBias {
                x: x.0,
                bias: bias.0,
                dims: (b, c, p),
            },
            needs,
        ))
    }

    // ---------------------------------------------------------------- shape ops

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v).to_vec())
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                detail: format!("rank is {}", first.len()),
            });
        }
        for &v in &inputs[1..] {
            let s = self.shape(v);
            if s.len() != first.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            if let Some(bad) = (0..s.len()).find(|&d| d != axis && s[d] != first[d]) {
                return Err(TensorError::Axis {
                    op: "concat",
                    axis: bad,
                    detail: format!("{} vs {}", first[bad], s[bad]),
                });
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let extents: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &e) in inputs.iter().zip(&extents) {
                out.extend_from_slice(&self.data(v.0)[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let needs = inputs.iter().any(|&v| self.needs_grad(v));
        Ok(self.raw(
            shape,
            out,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                outer,
                inner,
                extents,
            },
            needs,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] || len == 0 {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                detail: format!("range {start}..{} out of shape {xs:?}", start + len),
            });
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let extent = xs[axis];
        let xv = self.data(x.0);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let needs = self.needs_grad(x);
        Ok(self.raw(
            shape,
            out,
            Op::Slice {
                x: x.0,
                outer,
                inner,
                extent,
                start,
                len,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let data = self.data(x.0).to_vec();
        let needs = self.needs_grad(x);
        Ok(self.raw(shape.to_vec(), data, Op::Reshape { x: x.0 }, needs))
    }

    fn spatial(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(invalid(op, format!("needs at least 2 axes, got {xs:?}")));
        }
        let r = xs.len();
        Ok((xs[..r - 2].iter().product(), xs[r - 2], xs[r - 1]))
    }

    /// Nearest-neighbour upsampling of the last two axes.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(invalid("upsample_nearest", "factor must be positive"));
        }
        let (planes, h, w) = self.spatial("upsample_nearest", x)?;
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.data(x.0);
        let mut out = vec![T::zero(); planes * ho * wo];
        for pl in 0..planes {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(pl * ho + y) * wo + xx] = xv[(pl * h + y / factor) * w + xx / factor];
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let needs = self.needs_grad(x);
        Ok(self.raw(shape, out, Op::Upsample { x: x.0, factor }, needs))
    }

    /// Non-overlapping `k×k` average pooling of the last two axes.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (planes, h, w) = self.spatial("avgpool", x)?;
        let r = self.shape(x).len();
        if k == 0 {
            return Err(invalid("avgpool", "window must be positive"));
        }
        for (axis, ext) in [(r - 2, h), (r - 1, w)] {
            if ext % k != 0 {
                return Err(TensorError::Axis {
                    op: "avgpool",
                    axis,
                    detail: format!("extent {ext} not divisible by window {k}"),
                });
            }
        }
        let (ho, wo) = (h / k, w / k);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let xv = self.data(x.0);
        let mut out = vec![T::zero(); planes * ho * wo];
        for pl in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(pl * ho + y / k) * wo + xx / k] += xv[(pl * h + y) * w + xx] * inv;
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let needs = self.needs_grad(x);
        Ok(self.raw(shape, out, Op::AvgPool { x: x.0, k }, needs))
    }

    /// Zero padding of the last two axes by `pad` on every side.
    pub fn pad_zero(&mut self, x: Var, pad: usize) -> Result<Var> {
        let (planes, h, w) = self.spatial("pad_zero", x)?;
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let xv = self.data(x.0);
        let mut out = vec![T::zero(); planes * ho * wo];
        for pl in 0..planes {
            for y in 0..h {
                let dst = (pl * ho + y + pad) * wo + pad;
                out[dst..dst + w].copy_from_slice(&xv[(pl * h + y) * w..(pl * h + y + 1) * w]);
            }
        }
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let needs = self.needs_grad(x);
        Ok(self.raw(shape, out, Op::PadZero { x: x.0, pad }, needs))
    }

    /// Mean over `axes`; the reduced axes are removed.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut reduce = vec![false; xs.len()];
        for &a in axes {
            if a >= xs.len() || reduce[a] {
                return Err(TensorError::Axis {
                    op: "mean",
                    axis: a,
                    detail: format!("invalid or repeated axis for shape {xs:?}"),
                });
            }
            reduce[a] = true;
        }
        let out_shape: Vec<usize> = xs
            .iter()
            .zip(&reduce)
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        let count: usize = xs.iter().zip(&reduce).filter(|(_, &r)| r).map(|(&e, _)| e).product();
        if count == 0 {
            return Err(invalid("mean", "reduction over an empty axis"));
        }
        // Output flat index of every input element.
        let n = xs.iter().product::<usize>();
        let mut map = vec![0usize; n];
        let mut idx = vec![0usize; xs.len()];
        for slot in map.iter_mut() {
            let mut o = 0;
            for d in 0..xs.len() {
                if !reduce[d] {
                    o = o * xs[d] + idx[d];
                }
            }
            *slot = o;
            for d in (0..xs.len()).rev() {
                idx[d] += 1;
                if idx[d] < xs[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (v, &o) in self.data(x.0).iter().zip(&map) {
            out[o] += *v;
        }
        let inv = T::from_f64(1.0 / count as f64);
        for v in &mut out {
            *v *= inv;
        }
        let needs = self.needs_grad(x);
        Ok(self.raw(out_shape, out, Op::Mean { x: x.0, map, count }, needs))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean(x, &axes)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x.0).iter().copied().sum::<T>();
        let needs = self.needs_grad(x);
        self.raw(Vec::new(), vec![s], Op::Sum { x: x.0 }, needs)
    }

    // ---------------------------------------------------------------- fused losses

    /// Mean binary cross-entropy of `sigmoid(x)` against a constant target,
    /// in the overflow-free form `max(x,0) − x·t + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&mut self, x: Var, target: f64) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(invalid("bce_with_logits", "empty input"));
        }
        let t = T::from_f64(target);
        let mut acc = T::zero();
        for &v in self.data(x.0) {
            let zero = T::zero();
            acc += v.max(zero) - v * t + (-v.abs()).exp().ln_1p();
        }
        let loss = acc / T::from_f64(n as f64);
        let needs = self.needs_grad(x);
        Ok(self.raw(Vec::new(), vec![loss], Op::BceWithLogits { x: x.0, target: t }, needs))
    }

    /// Mean softmax cross-entropy of `x: [B, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() || xs[0] == 0 {
            return Err(invalid(
                "softmax_cross_entropy",
                format!("logits {xs:?} do not match {} labels", labels.len()),
            ));
        }
        let (b, k) = (xs[0], xs[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let xv = self.data(x.0);
        let mut probs = vec![T::zero(); b * k];
        let mut acc = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &xv[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - mx).exp();
                z += *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= z;
            }
            acc += mx + z.ln() - row[label];
        }
        let loss = acc / T::from_f64(b as f64);
        let needs = self.needs_grad(x);
        Ok(self.raw(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCrossEntropy {
                x: x.0,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    // ---------------------------------------------------------------- backward

    /// Back-propagates from the scalar `loss`. Replaying the same tape twice
    /// gives bit-identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad && !matches!(node.op, Op::Leaf) {
                let mut contributions = self.node_backward(i, &g);
                if self.fault == Some(node.op.tag()) {
                    let f = T::from_f64(1.01);
                    for (_, d) in &mut contributions {
                        for v in d.iter_mut() {
                            *v *= f;
                        }
                    }
                }
                for (target, delta) in contributions {
                    if !self.nodes[target].needs_grad {
                        continue;
                    }
                    match &mut grads[target] {
                        Some(acc) => {
                            for (a, d) in acc.iter_mut().zip(&delta) {
                                *a += *d;
                            }
                        }
                        slot @ None => *slot = Some(delta),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let zero = T::zero();
        let one = T::one();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let xv = self.data(*x);
                let yv = &node.value.data;
                let d: Vec<T> = match kind {
                    Elementwise::Neg => g.iter().map(|&v| -v).collect(),
                    Elementwise::Abs => g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &x)| {
                            if x > zero {
                                gv
                            } else if x < zero {
                                -gv
                            } else {
                                zero
                            }
                        })
                        .collect(),
                    Elementwise::Tanh => g.iter().zip(yv).map(|(&gv, &y)| gv * (one - y * y)).collect(),
                    Elementwise::Sigmoid => g.iter().zip(yv).map(|(&gv, &y)| gv * y * (one - y)).collect(),
                    Elementwise::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &x)| if x > zero { gv } else { zero })
                        .collect(),
                    Elementwise::LeakyRelu(s) => {
                        let s = T::from_f64(*s);
                        g.iter()
                            .zip(xv)
                            .map(|(&gv, &x)| if x > zero { gv } else { gv * s })
                            .collect()
                    }
                    _ => unreachable!(),
                };
                out.push((*x, d));
            }
            Op::Binary { kind, a, b, b_scalar } => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let b_at = |j: usize| if *b_scalar { bv[0] } else { bv[j] };
                if self.wants(*a) {
                    let d: Vec<T> = match kind {
                        Elementwise::Mul => g.iter().enumerate().map(|(j, &gv)| gv * b_at(j)).collect(),
                        _ => g.to_vec(),
                    };
                    out.push((*a, d));
                }
                if self.wants(*b) {
                    let d: Vec<T> = match kind {
                        Elementwise::Add => g.to_vec(),
                        Elementwise::Sub => g.iter().map(|&v| -v).collect(),
                        _ => g.iter().zip(av).map(|(&gv, &x)| gv * x).collect(),
                    };
                    let d = if *b_scalar { vec![d.into_iter().sum()] } else { d };
                    out.push((*b, d));
                }
            }
            Op::Scale { x, factor } => out.push((*x, g.iter().map(|&v| v * *factor).collect())),
            Op::Matmul { a, b, m, k, n } => {
                if self.wants(*a) {
                    let mut da = vec![zero; m * k];
                    T::gemm(*m, *n, *k, g, false, self.data(*b), true, &mut da, false);
                    out.push((*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![zero; k * n];
                    T::gemm(*k, *m, *n, self.data(*a), true, g, false, &mut db, false);
                    out.push((*b, db));
                }
            }
            Op::Conv2d { x, w, bias, geom } => {
                let need = (self.wants(*x), self.wants(*w), bias.is_some_and(|b| self.wants(b)));
                let r = kernels::conv2d_backward(self.data(*x), self.data(*w), g, geom, need);
                push_conv_grads(&mut out, *x, *w, *bias, r);
            }
            Op::ConvTranspose2d { x, w, bias, geom } => {
                let need = (self.wants(*x), self.wants(*w), bias.is_some_and(|b| self.wants(b)));
                let r = kernels::conv_transpose2d_backward(self.data(*x), self.data(*w), g, geom, need);
                push_conv_grads(&mut out, *x, *w, *bias, r);
            }
            Op::Norm2d {
                x,
                gamma,
                beta,
                batch_mode,
                dims,
                mean,
                inv_std,
                frozen,
            } => {
                let (b, c, p) = *dims;
                let xv = self.data(*x);
                let gv = self.data(*gamma);
                let groups = kernels::norm_groups(*batch_mode, b, c, p);
                let mut dx = vec![zero; xv.len()];
                let mut dgamma = vec![zero; c];
                let mut dbeta = vec![zero; c];
                for (gi, offsets) in groups.iter().enumerate() {
                    let ch = if *batch_mode { gi } else { gi % c };
                    let (mu, is, ga) = (mean[gi], inv_std[gi], gv[ch]);
                    let mut sum_dy = zero;
                    let mut sum_dy_xhat = zero;
                    for &o in offsets {
                        for (dy, xval) in g[o..o + p].iter().zip(&xv[o..o + p]) {
                            let xhat = (*xval - mu) * is;
                            sum_dy += *dy;
                            sum_dy_xhat += *dy * xhat;
                        }
                    }
                    dgamma[ch] += sum_dy_xhat;
                    dbeta[ch] += sum_dy;
                    if *frozen {
                        for &o in offsets {
                            for (d, dy) in dx[o..o + p].iter_mut().zip(&g[o..o + p]) {
                                *d = *dy * ga * is;
                            }
                        }
                    } else {
                        let n = T::from_f64((offsets.len() * p) as f64);
                        // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                        let k = ga * is / n;
                        for &o in offsets {
                            for ((d, dy), xval) in dx[o..o + p].iter_mut().zip(&g[o..o + p]).zip(&xv[o..o + p]) {
                                let xhat = (*xval - mu) * is;
                                *d = k * (n * *dy - sum_dy - xhat * sum_dy_xhat);
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    out.push((*x, dx));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if self.wants(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::ChannelBias { x, bias, dims } => {
                if self.wants(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.wants(*bias) {
                    out.push((*bias, kernels::channel_sums(g, dims.0, dims.1, dims.2)));
                }
            }
            Op::Concat {
                inputs,
                outer,
                inner,
                extents,
            } => {
                let total: usize = extents.iter().sum();
                let mut offset = 0;
                for (&v, &e) in inputs.iter().zip(extents) {
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + e * inner]);
                        }
                        out.push((v, d));
                    }
                    offset += e;
                }
            }
            Op::Slice {
                x,
                outer,
                inner,
                extent,
                start,
                len,
            } => {
                let mut d = vec![zero; outer * extent * inner];
                for o in 0..*outer {
                    let base = (o * extent + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, d));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::Upsample { x, factor } => {
                let xs = &self.nodes[*x].value.shape;
                let r = xs.len();
                let (h, w) = (xs[r - 2], xs[r - 1]);
                let planes: usize = xs[..r - 2].iter().product();
                let (ho, wo) = (h * factor, w * factor);
                let mut d = vec![zero; planes * h * w];
                for pl in 0..planes {
                    for y in 0..ho {
                        for xx in 0..wo {
                            d[(pl * h + y / factor) * w + xx / factor] += g[(pl * ho + y) * wo + xx];
                        }
                    }
                }
                out.push((*x, d));
            }
            Op::AvgPool { x, k } => {
                let xs = &self.nodes[*x].value.shape;
                let r = xs.len();
                let (h, w) = (xs[r - 2], xs[r - 1]);
                let planes: usize = xs[..r - 2].iter().product();
                let (ho, wo) = (h / k, w / k);
                let inv = T::from_f64(1.0 / (k * k) as f64);
                let mut d = vec![zero; planes * h * w];
                for pl in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            d[(pl * h + y) * w + xx] = g[(pl * ho + y / k) * wo + xx / k] * inv;
                        }
                    }
                }
                out.push((*x, d));
            }
            Op::Mean { x, map, count } => {
                let inv = T::from_f64(1.0 / *count as f64);
                out.push((*x, map.iter().map(|&o| g[o] * inv).collect()));
            }
            Op::Sum { x } => out.push((*x, vec![g[0]; self.nodes[*x].value.numel()])),
            Op::PadZero { x, pad } => {
                let xs = &self.nodes[*x].value.shape;
                let r = xs.len();
                let (h, w) = (xs[r - 2], xs[r - 1]);
                let planes: usize = xs[..r - 2].iter().product();
                let wo = w + 2 * pad;
                let ho = h + 2 * pad;
                let mut d = vec![zero; planes * h * w];
                for pl in 0..planes {
                    for y in 0..h {
                        let src = (pl * ho + y + pad) * wo + pad;
                        d[(pl * h + y) * w..(pl * h + y + 1) * w].copy_from_slice(&g[src..src + w]);
                    }
                }
                out.push((*x, d));
            }
            Op::BceWithLogits { x, target } => {
                let xv = self.data(*x);
                let scale = g[0] / T::from_f64(xv.len() as f64);
                out.push((*x, xv.iter().map(|&v| (sigmoid(v) - *target) * scale).collect()));
            }
            Op::SoftmaxCrossEntropy { x, labels, probs } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / T::from_f64(b as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                out.push((*x, d));
            }
        }
        out
    }
}

fn push_conv_grads<T>(
    out: &mut Vec<(usize, Vec<T>)>,
    x: usize,
    w: usize,
    bias: Option<usize>,
    r: kernels::ConvGrads<T>,
) {
    if let Some(dx) = r.dx {
        out.push((x, dx));
    }
    if let Some(dw) = r.dw {
        out.push((w, dw));
    }
    if let (Some(b), Some(db)) = (bias, r.dbias) {
        out.push((b, db));
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    let one = T::one();
    if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}
