//! Named parameters, gradient slots, and the `.msgp` file format.
//!
//! ```text
//! "MSGP" | u32 version=1 | u32 count
//! count x ( u16 name_len | name (UTF-8) | u8 rank | rank x u32 dim | f32 payload )
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use rand::Rng as _;

use super::rng::{stream, Purpose, Rng};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::util::{crc32, read_file, write_file, ByteReader, ByteWriter};

pub const PARAM_MAGIC: &[u8; 4] = b"MSGP";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in` the last dimension.
    UniformFanIn,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    seed: u64,
    rng: Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            seed,
            rng: stream(seed, Purpose::Init, &[]),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Creates a parameter. Draws are taken from the store's init stream in
    /// creation order and rounded to `f32` so that saved files reload exactly.
    pub fn init_param(&mut self, name: &str, shape: &[usize], scheme: Init) -> Result<&Tensor> {
        if self.index_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let value = match scheme {
            Init::Zeros => Tensor::zeros(shape),
            Init::UniformFanIn => {
                let fan_in = shape.last().copied().unwrap_or(1).max(1);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let u: f64 = self.rng.random();
                        (bound * (2.0 * u - 1.0)) as f32 as f64
                    })
                    .collect();
                Tensor::from_vec(shape, data)?
            }
        };
        self.insert(name, value)?;
        Ok(self.values.last().unwrap())
    }

    /// Adds a parameter with a given value.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.grads.push(Tensor::zeros(value.shape()));
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grad(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * g` into gradient slot `i`.
    pub fn accumulate_grad(&mut self, i: usize, g: &Tensor, scale: f64) -> Result<()> {
        let slot = &mut self.grads[i];
        if !slot.same_shape(g) {
            return Err(Error::shape(format!(
                "gradient for {} has shape {:?}, parameter {:?}",
                self.names[i],
                g.shape(),
                slot.shape()
            )));
        }
        for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            for x in v.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_capacity(12 + self.num_scalars() * 4);
        w.bytes(PARAM_MAGIC);
        w.u32(PARAM_VERSION);
        w.u32(self.len() as u32);
        for (name, value) in self.names.iter().zip(&self.values) {
            let len =
                u16::try_from(name.len()).map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
            w.u16(len);
            w.bytes(name.as_bytes());
            let rank = u8::try_from(value.shape().len()).map_err(|_| Error::invalid("rank > 255"))?;
            w.u8(rank);
            for &d in value.shape() {
                w.u32(u32::try_from(d).map_err(|_| Error::invalid("dimension > u32"))?);
            }
            for &x in value.data() {
                w.f32(x as f32);
            }
        }
        let crc = crc32(&w.buf);
        w.u32(crc);
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8], seed: u64) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "parameters");
        r.magic(PARAM_MAGIC)?;
        let version = r.u32()?;
        if version != PARAM_VERSION {
            return Err(Error::Version {
                expected: PARAM_VERSION,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new(seed);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n
                .filter(|&n| n <= r.remaining() / 4)
                .ok_or_else(|| Error::Truncated(format!("parameter {name} payload exceeds file")))?;
            let data: Vec<f64> = r.f32_vec(n)?.into_iter().map(f64::from).collect();
            store.insert(&name, Tensor::from_vec(&shape, data)?)?;
        }
        let body_end = r.position();
        let stored = r.u32()?;
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "parameters: {} trailing bytes",
                r.remaining()
            )));
        }
        let computed = crc32(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        if let Some(i) = store.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}", store.names[i])));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?, seed)
    }
}
