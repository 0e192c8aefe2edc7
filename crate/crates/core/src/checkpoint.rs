//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CNRF" | version u32 | step u64 | config length u32 | config JSON
//! section count u32
//! per section: name length u32 | name | ndim u32 | dims u64 × ndim | f64 × len
//! ```
//!
//! The JSON config carries the skeletons and every structural option, so a
//! checkpoint alone is enough to rebuild and render the model.

use std::fs;
use std::path::Path;

use diffcore::Tensor;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::Params;

pub const MAGIC: &[u8; 4] = b"CNRF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Params,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64) -> Checkpoint {
        Checkpoint {
            config: model.config.clone(),
            step,
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("model config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("checkpoint version {version} unsupported (expected {VERSION})")));
        }
        let step = r.u64("step")?;
        let n = r.u32("config length")? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(n, "config")?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let sections = r.u32("section count")?;
        let mut params = Params::new();
        for _ in 0..sections {
            let n = r.u32("section name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "section name")?)
                .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32(&name)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64(&name)? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("section `{name}` too large")))?, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if params.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate section `{name}`")));
            }
            params.insert(name.clone(), Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("section `{name}`: {e}")))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, step, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
