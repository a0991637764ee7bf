//! Binary checkpoints.
//!
//! Layout: magic `SEMCKPT1`, one version byte, then records of
//! `(u32 name length, name, u8 dtype, u8 rank, u64 extents.., element data)`,
//! all little-endian, then a CRC-32 of every preceding byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{build_network, Model, NetworkConfig};
use crate::data::ChannelStats;
use crate::error::{Result, SemError};
use crate::rng::RngState;
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 8] = b"SEMCKPT1";
pub const VERSION: u8 = 1;
/// Dtype code for raw byte records (embedded metadata).
pub const BYTES_CODE: u8 = 2;
const META_NAME: &str = "meta.json";

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    pub fn tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => RecordData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => RecordData::F64(t.to_f64_vec()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            shape: vec![bytes.len()],
            data: RecordData::Bytes(bytes),
        }
    }

    /// The record as a tensor of `T`, converting precision if needed.
    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        let data = match &self.data {
            RecordData::F32(v) => v.iter().map(|&x| T::from_f64(f64::from(x))).collect(),
            RecordData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            RecordData::Bytes(_) => {
                return Err(SemError::Integrity(format!(
                    "record '{}' is not a tensor",
                    self.name
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for r in records {
        let name_len =
            u32::try_from(r.name.len()).map_err(|_| SemError::domain("record name too long"))?;
        let rank =
            u8::try_from(r.shape.len()).map_err(|_| SemError::domain("record rank above 255"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(match r.data {
            RecordData::F32(_) => DType::F32.code(),
            RecordData::F64(_) => DType::F64.code(),
            RecordData::Bytes(_) => BYTES_CODE,
        });
        out.push(rank);
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &r.data {
            RecordData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            RecordData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            RecordData::Bytes(v) => out.extend_from_slice(v),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                SemError::Integrity(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return Err(SemError::Integrity("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(SemError::Integrity(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(SemError::Integrity("bad magic".into()));
    }
    if body[MAGIC.len()] != VERSION {
        return Err(SemError::Integrity(format!(
            "unsupported version {}",
            body[MAGIC.len()]
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len() + 1,
    };
    let mut records = Vec::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| SemError::Integrity("record name is not UTF-8".into()))?;
        let code = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| SemError::Integrity(format!("record '{name}' extents overflow")))?;
        let data = match code {
            0 => RecordData::F32(
                r.take(numel * 4)?
                    .chunks_exact(4)
                    .map(f32::read_le)
                    .collect(),
            ),
            1 => RecordData::F64(
                r.take(numel * 8)?
                    .chunks_exact(8)
                    .map(f64::read_le)
                    .collect(),
            ),
            BYTES_CODE => RecordData::Bytes(r.take(numel)?.to_vec()),
            other => {
                return Err(SemError::Integrity(format!(
                    "record '{name}' has unknown dtype {other}"
                )))
            }
        };
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

/// Everything besides tensors that a checkpoint carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub normalization: Option<ChannelStats>,
    /// Number of completed epochs.
    pub epoch: u64,
}

pub fn save_model<T: Element>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    let mut records = vec![Record::bytes(
        META_NAME,
        serde_json::to_vec(meta)
            .map_err(|e| SemError::domain(format!("cannot serialize metadata: {e}")))?,
    )];
    records.extend(
        model
            .store
            .entries()
            .iter()
            .map(|e| Record::tensor(&e.name, &e.value)),
    );
    fs::write(path, encode(&records)?)?;
    Ok(())
}

/// Rebuild the network described by the checkpoint and restore every tensor.
pub fn load_model<T: Element>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    let records = decode(&bytes)?;
    let meta_bytes = match records.first() {
        Some(Record {
            name,
            data: RecordData::Bytes(b),
            ..
        }) if name == META_NAME => b,
        _ => {
            return Err(SemError::Integrity(
                "checkpoint lacks metadata record".into(),
            ))
        }
    };
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| SemError::Integrity(format!("bad checkpoint metadata: {e}")))?;
    let mut model = build_network::<T>(&meta.network, RngState::new(0, 0))?;
    let tensors = &records[1..];
    if tensors.len() != model.store.len() {
        return Err(SemError::Integrity(format!(
            "checkpoint holds {} tensors, network expects {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for rec in tensors {
        model
            .store
            .set(&rec.name, rec.to_tensor()?)
            .map_err(|e| SemError::Integrity(format!("record '{}': {e}", rec.name)))?;
    }
    Ok((model, meta))
}
