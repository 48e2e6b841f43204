//! Binary checkpoints.
//!
//! Layout, all integers little-endian: the magic `IFG1`, a `u32` format
//! version, then chunks of a 4-byte tag, a `u64` payload length and the
//! payload, and finally a CRC32 of every preceding byte.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `CONF` | training config, UTF-8 JSON |
//! | `ARCH` | network descriptors, UTF-8 JSON |
//! | `PARM` | one tensor: `u32` name length, UTF-8 name, `u32` rank, `u64` extents, `f64` values |
//! | `OPTS` | Adam states (see [`encode_optimizers`]) |
//! | `PROG` | step counters and selection state, UTF-8 JSON |
//!
//! Tensor names are prefixed by their role: `param.`, `buffer.`,
//! `best.param.`, `best.buffer.` and `avg.`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Averages;
use crate::error::{format, Error, Result};
use crate::models::Architecture;
use crate::nn::{AdamConfig, AdamState, ParamStore};
use crate::tensor::{Element, Tensor};
use crate::training::{Optimizers, Session, Snapshot, TrainConfig};

pub const MAGIC: &[u8; 4] = b"IFG1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamRecord {
    pub network: String,
    pub config: AdamConfig,
    pub step: u64,
    /// Parameter name, first moment, second moment.
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub step: u64,
    pub best_step: Option<u64>,
    pub best_accuracy: Option<f64>,
    pub average_side: usize,
    pub average_sources: Vec<usize>,
}

/// Everything needed to resume or evaluate a run, independent of the
/// precision it trained in.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub architecture: Architecture,
    pub tensors: Vec<NamedTensor>,
    pub optimizers: Vec<AdamRecord>,
    pub progress: Progress,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format(format!("checkpoint {} is truncated", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| format(format!("checkpoint {} has an oversized length", self.what)))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format(format!("checkpoint {} has a non-UTF-8 name", self.what)))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(format(format!("checkpoint {} is truncated", self.what)));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format(format!("checkpoint {} has trailing bytes", self.what)))
        }
    }
}

fn encode_tensor(t: &NamedTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + t.name.len() + 8 * (t.shape.len() + t.values.len()));
    put_str(&mut out, &t.name);
    put_u32(&mut out, t.shape.len() as u32);
    for &e in &t.shape {
        put_u64(&mut out, e as u64);
    }
    put_f64s(&mut out, &t.values);
    out
}

fn decode_tensor(payload: &[u8]) -> Result<NamedTensor> {
    let mut r = Reader::new(payload, "PARM chunk");
    let name = r.str()?;
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .ok_or_else(|| format(format!("tensor `{name}` has an overflowing shape")))?;
    let values = r.f64s(n)?;
    r.finish()?;
    Ok(NamedTensor { name, shape, values })
}

/// `u32` count, then per optimizer: network name, `lr`, `beta1`, `beta2`,
/// `eps` as `f64`, `u64` step, `u32` entry count, and per entry the
/// parameter name, `u64` length and both moment vectors.
pub fn encode_optimizers(opts: &[AdamRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, opts.len() as u32);
    for o in opts {
        put_str(&mut out, &o.network);
        put_f64s(&mut out, &[o.config.lr, o.config.beta1, o.config.beta2, o.config.eps]);
        put_u64(&mut out, o.step);
        put_u32(&mut out, o.moments.len() as u32);
        for (name, m, v) in &o.moments {
            put_str(&mut out, name);
            put_u64(&mut out, m.len() as u64);
            put_f64s(&mut out, m);
            put_f64s(&mut out, v);
        }
    }
    out
}

fn decode_optimizers(payload: &[u8]) -> Result<Vec<AdamRecord>> {
    let mut r = Reader::new(payload, "OPTS chunk");
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let network = r.str()?;
        let config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let entries = r.u32()?;
        let mut moments = Vec::new();
        for _ in 0..entries {
            let name = r.str()?;
            let n = r.len()?;
            moments.push((name, r.f64s(n)?, r.f64s(n)?));
        }
        out.push(AdamRecord {
            network,
            config,
            step,
            moments,
        });
    }
    r.finish()?;
    Ok(out)
}

fn set_once<V>(slot: &mut Option<V>, v: V, tag: &str) -> Result<()> {
    if slot.replace(v).is_some() {
        return Err(format(format!("checkpoint has more than one {tag} chunk")));
    }
    Ok(())
}

fn json_chunk<D: serde::de::DeserializeOwned>(payload: &[u8], tag: &str) -> Result<D> {
    serde_json::from_slice(payload).map_err(|e| format(format!("checkpoint {tag} chunk: {e}")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let conf = serde_json::to_vec(&self.config).expect("config serializes");
        chunk(&mut out, b"CONF", &conf);
        let arch = serde_json::to_vec(&self.architecture).expect("architecture serializes");
        chunk(&mut out, b"ARCH", &arch);
        for t in &self.tensors {
            chunk(&mut out, b"PARM", &encode_tensor(t));
        }
        chunk(&mut out, b"OPTS", &encode_optimizers(&self.optimizers));
        let prog = serde_json::to_vec(&self.progress).expect("progress serializes");
        chunk(&mut out, b"PROG", &prog);
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(format("not a checkpoint: missing IFG1 magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format(format!(
                "checkpoint format version {version} is not supported; this build reads version {FORMAT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(format(format!(
                "checkpoint is corrupt: CRC32 {actual:08x} does not match the stored {stored:08x}"
            )));
        }
        let mut r = Reader::new(&body[8..], "body");
        let (mut config, mut architecture, mut optimizers, mut progress) = (None, None, None, None);
        let mut tensors = Vec::new();
        while r.pos < r.buf.len() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let n = r.len()?;
            let payload = r.take(n)?;
            match &tag {
                b"CONF" => set_once(&mut config, json_chunk(payload, "CONF")?, "CONF")?,
                b"ARCH" => set_once(&mut architecture, json_chunk(payload, "ARCH")?, "ARCH")?,
                b"PARM" => tensors.push(decode_tensor(payload)?),
                b"OPTS" => set_once(&mut optimizers, decode_optimizers(payload)?, "OPTS")?,
                b"PROG" => set_once(&mut progress, json_chunk(payload, "PROG")?, "PROG")?,
                _ => {
                    return Err(format(format!(
                        "checkpoint has an unknown chunk tag {:?}",
                        String::from_utf8_lossy(&tag)
                    )))
                }
            }
        }
        let missing = |name: &str| format(format!("checkpoint has no {name} chunk"));
        Ok(Self {
            config: config.ok_or_else(|| missing("CONF"))?,
            architecture: architecture.ok_or_else(|| missing("ARCH"))?,
            tensors,
            optimizers: optimizers.ok_or_else(|| missing("OPTS"))?,
            progress: progress.ok_or_else(|| missing("PROG"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Restores a session in the precision `T`.
    pub fn to_session<T: Element>(&self) -> Result<Session<T>> {
        if self.architecture != self.config.architecture {
            return Err(format("checkpoint ARCH chunk disagrees with its config"));
        }
        let store = |prefix: &str| -> Result<ParamStore<T>> {
            let mut s = ParamStore::new();
            for t in &self.tensors {
                let tensor = || Tensor::<T>::from_f64(t.shape.clone(), &t.values);
                if let Some(name) = t.name.strip_prefix(&format!("{prefix}param.")) {
                    s.insert(name, tensor()?)?;
                } else if let Some(name) = t.name.strip_prefix(&format!("{prefix}buffer.")) {
                    s.insert_buffer(name, tensor()?)?;
                }
            }
            Ok(s)
        };
        let params = store("")?;
        let expected: ParamStore<T> = self.architecture.init(0)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(format(format!("checkpoint parameter `{name}` is missing or has the wrong shape"))),
            }
        }
        if params.len() != expected.len() {
            return Err(format("checkpoint has parameters the architecture does not know"));
        }
        let p = &self.progress;
        let best = match (p.best_step, p.best_accuracy) {
            (Some(step), Some(accuracy)) => Some(Snapshot {
                step,
                accuracy,
                params: store("best.")?,
            }),
            (None, None) => None,
            _ => return Err(format("checkpoint progress has half a best snapshot")),
        };
        let avg = |name: &str| {
            self.tensor(name)
                .map(|t| t.values.clone())
                .ok_or_else(|| format(format!("checkpoint has no `{name}` tensor")))
        };
        let classes = self.architecture.classifier.classes;
        let averages = Averages {
            side: p.average_side,
            neutral: avg("avg.neutral")?,
            expressive: (0..classes).map(|k| avg(&format!("avg.expressive.{k}"))).collect::<Result<_>>()?,
            source_identities: p.average_sources.clone(),
        };
        let mut opts: Optimizers<T> = Optimizers::new(&self.config, &params);
        for rec in &self.optimizers {
            let slot = match rec.network.as_str() {
                "G" => opts.g.as_mut(),
                "D" => opts.d.as_mut(),
                "E" => Some(&mut opts.e),
                other => return Err(format(format!("checkpoint has an optimizer for unknown network `{other}`"))),
            }
            .ok_or_else(|| format(format!("checkpoint has an optimizer for absent network {}", rec.network)))?;
            let mut m = IndexMap::new();
            let mut v = IndexMap::new();
            for (name, mm, vv) in &rec.moments {
                m.insert(name.clone(), mm.iter().map(|&x| T::from_f64(x)).collect());
                v.insert(name.clone(), vv.iter().map(|&x| T::from_f64(x)).collect());
            }
            if m.keys().ne(slot.m.keys()) {
                return Err(format(format!("optimizer state of {} does not match its parameters", rec.network)));
            }
            *slot = AdamState {
                config: rec.config,
                step: rec.step,
                m,
                v,
            };
        }
        Ok(Session {
            config: self.config.clone(),
            params,
            opts,
            step: p.step,
            averages,
            best,
        })
    }

    pub fn from_session<T: Element>(s: &Session<T>) -> Self {
        let mut tensors = Vec::new();
        let mut push_store = |prefix: &str, store: &ParamStore<T>| {
            for (name, t) in store.iter() {
                tensors.push(named(format!("{prefix}param.{name}"), t));
            }
            for (name, t) in store.buffers() {
                tensors.push(named(format!("{prefix}buffer.{name}"), t));
            }
        };
        push_store("", &s.params);
        if let Some(b) = &s.best {
            push_store("best.", &b.params);
        }
        let side = s.averages.side;
        tensors.push(NamedTensor {
            name: "avg.neutral".into(),
            shape: vec![side, side],
            values: s.averages.neutral.clone(),
        });
        for (k, e) in s.averages.expressive.iter().enumerate() {
            tensors.push(NamedTensor {
                name: format!("avg.expressive.{k}"),
                shape: vec![side, side],
                values: e.clone(),
            });
        }
        let record = |network: &str, st: &AdamState<T>| AdamRecord {
            network: network.into(),
            config: st.config,
            step: st.step,
            moments: st
                .m
                .iter()
                .zip(st.v.values())
                .map(|((n, m), v)| {
                    let f = |x: &Vec<T>| x.iter().map(|y| y.as_f64()).collect();
                    (n.clone(), f(m), f(v))
                })
                .collect(),
        };
        let mut optimizers = Vec::new();
        if let Some(g) = &s.opts.g {
            optimizers.push(record("G", g));
        }
        if let Some(d) = &s.opts.d {
            optimizers.push(record("D", d));
        }
        optimizers.push(record("E", &s.opts.e));
        Self {
            config: s.config.clone(),
            architecture: s.config.architecture.clone(),
            tensors,
            optimizers,
            progress: Progress {
                step: s.step,
                best_step: s.best.as_ref().map(|b| b.step),
                best_accuracy: s.best.as_ref().map(|b| b.accuracy),
                average_side: side,
                average_sources: s.averages.source_identities.clone(),
            },
        }
    }
}

fn named<T: Element>(name: String, t: &Tensor<T>) -> NamedTensor {
    NamedTensor {
        name,
        shape: t.shape().to_vec(),
        values: t.to_f64_vec(),
    }
}
