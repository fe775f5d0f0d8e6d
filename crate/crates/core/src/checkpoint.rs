//! Binary model checkpoints.
//!
//! Format: magic bytes `HTRC`, little-endian u32 version (currently 1),
//! u32 layer-record count, then per record: u8 layer tag (0 = conv,
//! 1 = dense), u32 rank, rank x u32 extents, f32 weight values row-major,
//! u32 bias length, f32 bias values. All multi-byte values little-endian.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::layers::{ConvParams, DenseParams};
use crate::model::{Model, ModelError, ParamLayer};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"HTRC";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_DENSE: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}, expected {MAGIC:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0}, expected {VERSION}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| CheckpointError::Corrupt("record length overflows".into()))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "expected {n} more bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Corrupt("value count overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn push_record(out: &mut Vec<u8>, tag: u8, weights: &Tensor<f32>, bias: &Tensor<f32>) {
    out.push(tag);
    out.extend_from_slice(&(weights.rank() as u32).to_le_bytes());
    for &d in weights.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in weights.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(bias.len() as u32).to_le_bytes());
    for &v in bias.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let records = model.param_layers();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for record in &records {
        match record {
            ParamLayer::Conv(p) => push_record(&mut out, TAG_CONV, &p.kernels, &p.bias),
            ParamLayer::Dense(p) => push_record(&mut out, TAG_DENSE, &p.weight, &p.bias),
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ParamLayer<f32>>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u8()?;
        let rank = r.u32()? as usize;
        let expected_rank = match tag {
            TAG_CONV => 4,
            TAG_DENSE => 2,
            other => {
                return Err(CheckpointError::Corrupt(format!(
                    "record {i}: unknown layer tag {other}"
                )))
            }
        };
        if rank != expected_rank {
            return Err(CheckpointError::Corrupt(format!(
                "record {i}: tag {tag} expects rank {expected_rank}, got {rank}"
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let shape =
            Shape::new(dims).map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?;
        let weights = r.f32_vec(shape.len())?;
        let weights = Tensor::from_vec(shape, weights)
            .map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?;
        let bias_len = r.u32()? as usize;
        let bias_shape = Shape::new([bias_len])
            .map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?;
        let bias = Tensor::from_vec(bias_shape, r.f32_vec(bias_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?;
        let record = match tag {
            TAG_CONV => ParamLayer::Conv(
                ConvParams::new(weights, bias)
                    .map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?,
            ),
            _ => ParamLayer::Dense(
                DenseParams::new(weights, bias)
                    .map_err(|e| CheckpointError::Corrupt(format!("record {i}: {e}")))?,
            ),
        };
        records.push(record);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Ok(records)
}

pub fn save(path: &Path, model: &Model<f32>) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load(path: &Path) -> Result<Vec<ParamLayer<f32>>> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode(&bytes)
}

/// Load and assemble in one step; the input dims come from the caller (the
/// checkpoint stores only layer extents).
pub fn load_model(path: &Path, input: (usize, usize, usize), dropout_p: f64) -> Result<Model<f32>> {
    Ok(Model::assemble(load(path)?, input, dropout_p)?)
}
