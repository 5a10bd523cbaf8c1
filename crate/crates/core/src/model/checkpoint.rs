//! Binary parameter container.
//!
//! Layout, all integers little-endian `u64` unless noted:
//!
//! ```text
//! magic  b"HIESTCKP"      8 bytes
//! version                u32 (currently 1)
//! header length, header  UTF-8 `key = value` lines (configuration)
//! tensor count
//! per tensor: name length, name, rank, dims..., f64 payload (row-major)
//! ```
//!
//! Optimizer moments, when saved, are tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{HiestConfig, HiestParams};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HIESTCKP";
const VERSION: u32 = 1;

/// Everything a checkpoint file holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: KeyValues,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(header: KeyValues) -> Self {
        Self {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push((name.into(), t.clone()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push_params(&mut self, params: &HiestParams) {
        for (name, t) in params.named() {
            self.push(name, t);
        }
    }

    pub fn config(&self) -> Result<HiestConfig> {
        let mut cfg = HiestConfig::default();
        cfg.read_kv(&self.header)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds the parameter set described by the header.
    pub fn params(&self) -> Result<HiestParams> {
        let cfg = self.config()?;
        let logits = self
            .get("mrg_logits")
            .ok_or_else(|| Error::Checkpoint("missing parameter mrg_logits".into()))?;
        let mut params = HiestParams::init(&cfg, logits.shape()[0], 0)?;
        let by_name: HashMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        params.assign(|name| by_name.get(name).map(|t| (*t).clone()))?;
        Ok(params)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(w, self.header.render().as_bytes())?;
        write_u64(w, self.tensors.len() as u64)?;
        for (name, t) in &self.tensors {
            write_bytes(w, name.as_bytes())?;
            write_u64(w, t.rank() as u64)?;
            for &d in t.shape() {
                write_u64(w, d as u64)?;
            }
            let mut buf = Vec::with_capacity(8 * t.numel());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v).map_err(truncated)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header = String::from_utf8(read_bytes(r)?)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header = KeyValues::parse(&header)?;
        let count = read_u64(r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u64(r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("{name}: rank {rank} too large")));
            }
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} too large")))?;
            let mut buf = vec![0u8; 8 * n];
            r.read_exact(&mut buf).map_err(truncated)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Self { header, tensors })
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u64(r)?;
    if n > 1 << 24 {
        return Err(Error::Checkpoint(format!("string of {n} bytes is implausible")));
    }
    let mut b = vec![0u8; n as usize];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    ckpt.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    Checkpoint::read_from(&mut r)
}
