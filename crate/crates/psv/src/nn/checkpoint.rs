//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! magic `PSVCKPT1`, format version (u32), length-prefixed config text,
//! epoch (u32), length-prefixed metrics text, then three array sections:
//! trainable parameters, state buffers (batchnorm running statistics) and,
//! if present, optimizer moments with the step count. Each array entry is
//! name length, name bytes, rank, dims, then 32-bit floats.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::tensor::Matrix;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PSVCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn from_matrix(name: &str, m: &Matrix) -> Self {
        NamedArray {
            name: name.to_string(),
            dims: vec![m.nrows() as u32, m.ncols() as u32],
            data: m.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.dims.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "array '{}' has rank {}, expected 2",
                self.name,
                self.dims.len()
            )));
        }
        let (r, c) = (self.dims[0] as usize, self.dims[1] as usize);
        if r * c != self.data.len() {
            return Err(Error::Checkpoint(format!(
                "array '{}' dims {r}x{c} do not match {} values",
                self.name,
                self.data.len()
            )));
        }
        Ok(Array2::from_shape_vec((r, c), self.data.iter().map(|v| *v as f64).collect()).unwrap())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointFile {
    pub config_text: String,
    pub epoch: u32,
    pub metrics_text: String,
    pub params: Vec<NamedArray>,
    pub stats: Vec<NamedArray>,
    pub optimizer: Option<(u64, Vec<NamedArray>)>,
}

impl CheckpointFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_bytes(&mut buf, self.config_text.as_bytes());
        put_u32(&mut buf, self.epoch);
        put_bytes(&mut buf, self.metrics_text.as_bytes());
        put_arrays(&mut buf, &self.params);
        put_arrays(&mut buf, &self.stats);
        match &self.optimizer {
            Some((step, arrays)) => {
                buf.push(1);
                buf.extend_from_slice(&step.to_le_bytes());
                put_arrays(&mut buf, arrays);
            }
            None => buf.push(0),
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config_text = cur.string()?;
        let epoch = cur.u32()?;
        let metrics_text = cur.string()?;
        let params = cur.arrays()?;
        let stats = cur.arrays()?;
        let optimizer = match cur.u8()? {
            0 => None,
            1 => {
                let step = cur.u64()?;
                Some((step, cur.arrays()?))
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "invalid optimizer flag {other}"
                )))
            }
        };
        Ok(CheckpointFile {
            config_text,
            epoch,
            metrics_text,
            params,
            stats,
            optimizer,
        })
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

fn put_arrays(buf: &mut Vec<u8>, arrays: &[NamedArray]) {
    put_u32(buf, arrays.len() as u32);
    for a in arrays {
        put_bytes(buf, a.name.as_bytes());
        put_u32(buf, a.dims.len() as u32);
        for d in &a.dims {
            put_u32(buf, *d);
        }
        for v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint text".into()))
    }

    fn arrays(&mut self) -> Result<Vec<NamedArray>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u32()?);
            }
            let count: usize = dims.iter().map(|d| *d as usize).product();
            let bytes = self.take(count * 4)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push(NamedArray { name, dims, data });
        }
        Ok(out)
    }
}
