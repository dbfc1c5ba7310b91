use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform {
        fan_in: usize,
    },
    /// Uniform in `±1/sqrt(fan_in)`, the usual bias/linear default.
    Uniform {
        fan_in: usize,
    },
}

/// Ordered collection of all parameters of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CADPCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => t.data_mut().fill(1.0),
            Init::KaimingUniform { fan_in } | Init::Uniform { fan_in } => {
                let bound = match init {
                    Init::KaimingUniform { .. } => (6.0 / fan_in.max(1) as f64).sqrt(),
                    _ => 1.0 / (fan_in.max(1) as f64).sqrt(),
                };
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            tensor: t.with_grad(),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites a parameter's values, e.g. to zero-initialise a layer in
    /// tests.
    pub fn set(&mut self, id: ParamId, data: &[f64]) -> Result<(), NumericsError> {
        let p = &mut self.params[id.0];
        if p.tensor.len() != data.len() {
            return Err(NumericsError::Shape(format!(
                "{}: {} values for {}",
                p.name,
                data.len(),
                p.tensor.len()
            )));
        }
        p.tensor.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Binary checkpoint: magic, version byte, parameter count, then per
    /// parameter its name, shape and little-endian `f64` values.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NumericsError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let shape = p.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a checkpoint into a list of `(name, tensor)` records.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NumericsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {}",
                version[0]
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NumericsError::Checkpoint("name is not utf-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            out.push((name, Tensor::new(&shape, data)?));
        }
        Ok(out)
    }

    /// Loads values from a checkpoint into the already-registered parameters.
    /// Every parameter must be present with a matching shape.
    pub fn load_checkpoint<R: Read>(&mut self, r: R) -> Result<(), NumericsError> {
        let records = Self::read_checkpoint(r)?;
        let mut seen = vec![false; self.params.len()];
        for (name, t) in records {
            let id = self
                .id(&name)
                .ok_or_else(|| NumericsError::Checkpoint(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.tensor.shape() != t.shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "{name}: shape {:?} does not match {:?}",
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(t.data());
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(NumericsError::Checkpoint(format!(
                "missing parameter {}",
                self.params[i].name
            )));
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
