//! Parameter checkpoint files.
//!
//! A checkpoint is a single UTF-8 JSON document:
//!
//! ```text
//! {"format_version": 1,
//!  "header": { ...caller-defined... },
//!  "params": [{"name": "...", "shape": [rows, cols], "values": [...]}, ...]}
//! ```
//!
//! `values` are row-major and written with shortest round-trip formatting, so
//! a write/read cycle reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {path}: malformed ({source})")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint {path}: format version {found}, expected {CHECKPOINT_FORMAT_VERSION}")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("checkpoint array {name}: {reason}")]
    BadArray { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self { name: name.into(), shape: [t.rows(), t.cols()], values: t.as_slice().to_vec() }
    }

    pub fn to_tensor(&self) -> Result<Tensor, CheckpointError> {
        Tensor::new(self.shape[0], self.shape[1], self.values.clone())
            .map_err(|e| CheckpointError::BadArray { name: self.name.clone(), reason: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile<H> {
    pub format_version: u32,
    pub header: H,
    pub params: Vec<NamedArray>,
}

pub fn write_checkpoint<H: Serialize>(path: &Path, header: &H, params: &[NamedArray]) -> Result<(), CheckpointError> {
    #[derive(Serialize)]
    struct Out<'a, H> {
        format_version: u32,
        header: &'a H,
        params: &'a [NamedArray],
    }
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut w, &Out { format_version: CHECKPOINT_FORMAT_VERSION, header, params })
        .map_err(|source| CheckpointError::Parse { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint<H: DeserializeOwned>(path: &Path) -> Result<CheckpointFile<H>, CheckpointError> {
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|source| CheckpointError::Parse { path: path.to_path_buf(), source })?;
    let found = value.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { path: path.to_path_buf(), found });
    }
    serde_json::from_value(value).map_err(|source| CheckpointError::Parse { path: path.to_path_buf(), source })
}
