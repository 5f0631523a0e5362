//! Named parameter storage with Adam state and flat-file checkpoints.

use std::collections::BTreeMap;
use std::io::Read as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

pub const CKPT_MAGIC: &[u8; 7] = b"WSCKPT1";
pub const CKPT_VERSION: u16 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

struct Slot<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
    m: Tensor<f64>,
    v: Tensor<f64>,
}

pub struct ParamStore<S: Real> {
    slots: Vec<Slot<S>>,
    by_name: BTreeMap<String, usize>,
    step: u64,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(Error::validation(format!("duplicate parameter {name}")));
        }
        let idx = self.slots.len();
        self.slots.push(Slot {
            name: name.to_string(),
            grad: Tensor::zeros(&value.shape),
            m: Tensor::zeros(&value.shape),
            v: Tensor::zeros(&value.shape),
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Weight tensor initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    /// fan_in being the product of all dimensions but the last.
    pub fn define(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) -> Result<usize> {
        let fan_in: usize = shape[..shape.len() - 1].iter().product::<usize>().max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| S::of_f64(rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor { shape: shape.to_vec(), data })
    }

    /// Bias vector initialized to zero.
    pub fn define_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name.get(name).copied().ok_or_else(|| Error::Unknown {
            kind: "parameter".into(),
            value: name.into(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Tensor<S> {
        &self.slots[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<S> {
        &mut self.slots[idx].value
    }

    pub fn grad(&self, idx: usize) -> &Tensor<S> {
        &self.slots[idx].grad
    }

    pub fn accumulate_grad(&mut self, idx: usize, g: &Tensor<S>) {
        debug_assert_eq!(self.slots[idx].grad.shape, g.shape);
        for (dst, v) in self.slots[idx].grad.data.iter_mut().zip(&g.data) {
            *dst += *v;
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.grad.data.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// One Adam update over all parameters from accumulated gradients.
    pub fn adam_step(&mut self, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for slot in &mut self.slots {
            for i in 0..slot.value.data.len() {
                let g = slot.grad.data[i].to_f64_lossy();
                let m = ADAM_BETA1 * slot.m.data[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * slot.v.data[i] + (1.0 - ADAM_BETA2) * g * g;
                slot.m.data[i] = m;
                slot.v.data[i] = v;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                slot.value.data[i] = S::of_f64(slot.value.data[i].to_f64_lossy() - update);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.slots.len() as u32).to_le_bytes());
        // name order is the stable definition order
        for slot in &self.slots {
            buf.extend_from_slice(&(slot.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(slot.name.as_bytes());
            buf.extend_from_slice(&(slot.value.shape.len() as u32).to_le_bytes());
            for d in &slot.value.shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &slot.value.data {
                buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(Error::Io)?;
        Ok(())
    }

    /// Load values into an already-defined store; names and shapes must
    /// match exactly.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::open(path).map_err(Error::Io)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(Error::Io)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > buf.len() {
                return Err(Error::Format(format!(
                    "{}: truncated checkpoint",
                    path.display()
                )));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 7)? != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad checkpoint magic",
                path.display()
            )));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if count != self.slots.len() {
            return Err(Error::Format(format!(
                "{}: checkpoint has {count} parameters, model defines {}",
                path.display(),
                self.slots.len()
            )));
        }
        let mut seen = vec![false; self.slots.len()];
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Format(format!("{}: bad parameter name", path.display())))?;
            let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let idx = self.index_of(&name).map_err(|_| {
                Error::Format(format!(
                    "{}: checkpoint parameter {name} not defined by the model",
                    path.display()
                ))
            })?;
            if self.slots[idx].value.shape != shape {
                return Err(Error::Format(format!(
                    "{}: {name} has shape {:?} in checkpoint, model expects {:?}",
                    path.display(),
                    shape,
                    self.slots[idx].value.shape
                )));
            }
            let bytes = take(&mut pos, n * 4)?;
            for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                self.slots[idx].value.data[i] =
                    S::of_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
            seen[idx] = true;
        }
        if pos != buf.len() {
            return Err(Error::Format(format!(
                "{}: trailing bytes in checkpoint",
                path.display()
            )));
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format(format!(
                "{}: checkpoint missing parameters",
                path.display()
            )));
        }
        Ok(())
    }
}
