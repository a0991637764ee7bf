//! CIFAR-10 / CIFAR-100 binary format.
//!
//! CIFAR-10 records are 3,073 bytes: one label byte then 3,072 pixel bytes
//! (1,024 red, 1,024 green, 1,024 blue, row-major). CIFAR-100 records are
//! 3,074 bytes: coarse label, fine label, then the same pixel layout.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetRecord, PIXELS};
use crate::error::{Result, SemError};

pub const TRAIN_RECORDS: usize = 50_000;
pub const TEST_RECORDS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn from_classes(classes: usize) -> Result<Self> {
        match classes {
            10 => Ok(CifarVariant::Cifar10),
            100 => Ok(CifarVariant::Cifar100),
            other => Err(SemError::usage(format!(
                "CIFAR variant must be 10 or 100, got {other}"
            ))),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_size(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }

    pub fn train_files(self) -> Vec<String> {
        match self {
            CifarVariant::Cifar10 => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            CifarVariant::Cifar100 => vec!["train.bin".to_string()],
        }
    }

    pub fn test_files(self) -> Vec<String> {
        match self {
            CifarVariant::Cifar10 => vec!["test_batch.bin".to_string()],
            CifarVariant::Cifar100 => vec!["test.bin".to_string()],
        }
    }
}

/// Parse a whole file's worth of records.
pub fn decode_records(
    bytes: &[u8],
    variant: CifarVariant,
    path: &Path,
) -> Result<Vec<DatasetRecord>> {
    let stride = variant.record_size();
    let err = |offset: usize, message: String| SemError::Ingestion {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if !bytes.len().is_multiple_of(stride) {
        let whole = bytes.len() / stride;
        return Err(err(
            whole * stride,
            format!(
                "truncated record: {} bytes is not a multiple of the {stride}-byte record stride",
                bytes.len()
            ),
        ));
    }
    let classes = variant.num_classes();
    bytes
        .chunks_exact(stride)
        .enumerate()
        .map(|(i, rec)| {
            let offset = i * stride;
            let (label, coarse) = match variant {
                CifarVariant::Cifar10 => (usize::from(rec[0]), None),
                CifarVariant::Cifar100 => (usize::from(rec[1]), Some(usize::from(rec[0]))),
            };
            if label >= classes {
                return Err(err(
                    offset + variant.label_bytes() - 1,
                    format!("label {label} out of range for {classes} classes"),
                ));
            }
            if let Some(c) = coarse.filter(|&c| c >= 20) {
                return Err(err(
                    offset,
                    format!("coarse label {c} out of range for 20 superclasses"),
                ));
            }
            let image = rec[variant.label_bytes()..]
                .iter()
                .map(|&b| f32::from(b) / 255.0)
                .collect();
            Ok(DatasetRecord {
                image,
                label,
                coarse_label: coarse,
            })
        })
        .collect()
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Serialize records in the published layout.
pub fn encode_records(records: &[DatasetRecord], variant: CifarVariant) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * variant.record_size());
    for r in records {
        if variant == CifarVariant::Cifar100 {
            out.push(r.coarse_label.unwrap_or(0) as u8);
        }
        out.push(r.label as u8);
        out.extend(r.image.iter().map(|&v| to_byte(v)));
    }
    out
}

#[derive(Debug, Clone)]
pub struct CifarData {
    pub variant: CifarVariant,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// The directory holding the binary files: `root` itself or its canonical subdirectory.
pub fn resolve_dir(root: &Path, variant: CifarVariant) -> PathBuf {
    let nested = root.join(variant.subdir());
    let probe = &variant.test_files()[0];
    if !root.join(probe).exists() && nested.join(probe).exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn load_split(
    dir: &Path,
    files: &[String],
    variant: CifarVariant,
    expected: usize,
) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::with_capacity(expected);
    let per_file = expected / files.len();
    for name in files {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| SemError::Ingestion {
            path: path.clone(),
            offset: 0,
            message: format!("cannot read: {e}"),
        })?;
        let decoded = decode_records(&bytes, variant, &path)?;
        if decoded.len() != per_file {
            return Err(SemError::Ingestion {
                offset: bytes.len() as u64,
                path,
                message: format!("expected {per_file} records, found {}", decoded.len()),
            });
        }
        records.extend(decoded);
    }
    Ok(records)
}

/// Load the full train (50,000) and test (10,000) splits.
pub fn load_cifar(root: &Path, variant: CifarVariant) -> Result<CifarData> {
    let dir = resolve_dir(root, variant);
    Ok(CifarData {
        variant,
        train: load_split(&dir, &variant.train_files(), variant, TRAIN_RECORDS)?,
        test: load_split(&dir, &variant.test_files(), variant, TEST_RECORDS)?,
    })
}
