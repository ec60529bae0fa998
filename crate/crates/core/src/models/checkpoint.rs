//! Flat named-tensor container for model state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "CKDCKPT1"
//! count    u32
//! entry × count:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims u64 × ndim
//!   values   f64 × product(dims)
//! ```
//!
//! Names follow `<role>.<part>.<layer>.<tensor>`, for example
//! `student.encoder.layer0.weight` or `proj_t.bn.running_mean`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layers::{BatchNorm, Encoder, HeadClassifier, Linear, Model, ProjectionHead, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::numeric::{Param, Tensor};

const MAGIC: &[u8; 8] = b"CKDCKPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: &[Param]) -> Self {
        let mut c = Checkpoint::new();
        c.extend(params);
        c
    }

    pub fn extend(&mut self, params: &[Param]) {
        for p in params {
            self.insert(p.name(), p.value());
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name.to_string(), tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.names().any(|n| n.starts_with(&dotted))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let count = read_u32(&mut r)?;
        let mut c = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| Error::Checkpoint("truncated name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| Error::Checkpoint(format!("{name}: truncated shape")))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| Error::Checkpoint(format!("{name}: truncated values")))?;
                values.push(f64::from_le_bytes(b));
            }
            c.entries.push((name, Tensor::new(shape, values)?));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Copies stored values into existing parameters, matched by name.
    pub fn restore(&self, params: &[Param]) -> Result<()> {
        for p in params {
            let t = self.require(p.name())?;
            if t.shape() != p.shape().as_slice() {
                return Err(Error::shape("checkpoint restore", t.shape(), &p.shape()));
            }
            p.set_values(t.values());
        }
        Ok(())
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    fn param(&self, name: &str) -> Result<Param> {
        Ok(Param::new(name, self.require(name)?.clone()))
    }

    fn linear(&self, prefix: &str) -> Result<Linear> {
        Linear::from_params(
            self.param(&format!("{prefix}.weight"))?,
            self.param(&format!("{prefix}.bias"))?,
        )
    }

    /// Rebuilds `<prefix>.layer{i}` linear layers in order.
    pub fn encoder(&self, prefix: &str) -> Result<Encoder> {
        let mut layers = Vec::new();
        while self.get(&format!("{prefix}.layer{}.weight", layers.len())).is_some() {
            layers.push(self.linear(&format!("{prefix}.layer{}", layers.len()))?);
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!("no encoder layers under `{prefix}`")));
        }
        Encoder::from_layers(layers)
    }

    pub fn head(&self, prefix: &str) -> Result<HeadClassifier> {
        Ok(HeadClassifier {
            linear: self.linear(prefix)?,
        })
    }

    /// Rebuilds `<prefix>.encoder` and `<prefix>.head`.
    pub fn model(&self, prefix: &str) -> Result<Model> {
        Model::from_parts(
            self.encoder(&format!("{prefix}.encoder"))?,
            self.head(&format!("{prefix}.head"))?,
        )
    }

    pub fn projector(&self, prefix: &str) -> Result<ProjectionHead> {
        let linear = self.linear(&format!("{prefix}.linear"))?;
        let bn_prefix = format!("{prefix}.bn");
        let bn = if self.get(&format!("{bn_prefix}.gamma")).is_some() {
            let buffer = |n: &str| -> Result<Param> {
                let name = format!("{bn_prefix}.{n}");
                Ok(Param::buffer(&name, self.require(&name)?.clone()))
            };
            Some(BatchNorm {
                gamma: self.param(&format!("{bn_prefix}.gamma"))?,
                beta: self.param(&format!("{bn_prefix}.beta"))?,
                running_mean: buffer("running_mean")?,
                running_var: buffer("running_var")?,
                eps: BN_EPS,
                momentum: BN_MOMENTUM,
            })
        } else {
            None
        };
        Ok(ProjectionHead { linear, bn })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}
