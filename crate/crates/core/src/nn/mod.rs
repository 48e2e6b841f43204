//! Parameters, initialization, layer helpers and the Adam optimizer.

mod adam;
mod layers;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::Forward;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config, Result};
use crate::tensor::{Element, Gradients, Tape, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or linear weight, `normal(0, 0.02)`.
    Weight,
    /// A weight that starts at exactly zero (output layers).
    ZeroWeight,
    Bias,
    /// Normalization scale, `normal(1, 0.02)`.
    Gamma,
    Beta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
        }
    }
}

/// Non-trainable state: running statistics of batch normalization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferSpec {
    pub name: String,
    pub len: usize,
    pub fill: u8,
}

pub const INIT_STD: f64 = 0.02;

/// Ordered map from hierarchical names such as `G.enc3.weight` to tensors.
///
/// Trainable entries always have `requires_grad` set. Buffers hold
/// non-trainable running statistics and never receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(config(format!("duplicate parameter name `{name}`")));
        }
        self.buffers.insert(name, tensor.with_requires_grad(false));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Entries whose name starts with `prefix`, e.g. `"D."`.
    pub fn num_elements_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Adds the tape gradients of every trainable parameter recorded on
    /// `tape` into the matching entries of this store.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in tape.params() {
            let Some(g) = grads.get(*var) else { continue };
            let entry = self
                .params
                .get_mut(name)
                .ok_or_else(|| config(format!("tape parameter `{name}` is not in the store")))?;
            entry.accumulate_grad(g);
        }
        Ok(())
    }

    /// Largest absolute gradient entry over all parameters (0 when none).
    pub fn max_abs_grad(&self) -> f64 {
        self.params
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
    }

    /// FNV-1a hash over names and value bits of the entries with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.params.iter().chain(&self.buffers) {
            if !name.starts_with(prefix) {
                continue;
            }
            eat(name.as_bytes());
            for v in t.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Moves every entry of `other` into this store.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for (n, t) in other.params {
            self.insert(n, t)?;
        }
        for (n, t) in other.buffers {
            self.insert_buffer(n, t)?;
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<U>().with_requires_grad(true)))
                .collect(),
            buffers: self.buffers.iter().map(|(n, t)| (n.clone(), t.cast::<U>())).collect(),
        }
    }
}

/// Draws a fresh store for `specs` (and zero/one-filled `buffers`).
///
/// Values depend only on `seed` and the order of `specs`.
pub fn init_params<T: Element>(specs: &[ParamSpec], buffers: &[BufferSpec], seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut store = ParamStore::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        if spec.shape.is_empty() || n == 0 {
            return Err(config(format!(
                "parameter `{}` has zero-extent shape {:?}",
                spec.name, spec.shape
            )));
        }
        let data: Vec<T> = match spec.kind {
            ParamKind::Weight => (0..n).map(|_| T::from_f64(noise.sample(&mut rng))).collect(),
            ParamKind::Gamma => (0..n).map(|_| T::from_f64(1.0 + noise.sample(&mut rng))).collect(),
            ParamKind::ZeroWeight | ParamKind::Bias | ParamKind::Beta => vec![T::zero(); n],
        };
        store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    for b in buffers {
        if b.len == 0 {
            return Err(config(format!("buffer `{}` is empty", b.name)));
        }
        let fill = T::from_f64(f64::from(b.fill));
        store.insert_buffer(b.name.clone(), Tensor::full(vec![b.len], fill))?;
    }
    Ok(store)
}
