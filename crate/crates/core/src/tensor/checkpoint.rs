//! `.ckpt` files: one line of JSON header, then the raw little-endian
//! payload of every tensor in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

const FORMAT: &str = "latentflow-ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub step_count: u64,
    pub tensors: Vec<TensorHeader>,
    /// Owner-specific payload (normalization statistics, configs, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub store: ParamStore<S>,
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<S: Scalar>(
    path: &Path,
    store: &ParamStore<S>,
    metadata: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        dtype: S::DTYPE.into(),
        step_count: store.step_count(),
        tensors: store
            .iter()
            .map(|(name, t)| TensorHeader {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let json = serde_json::to_string(&header).map_err(|e| TensorError::Format(e.to_string()))?;
    out.write_all(json.as_bytes())?;
    out.write_all(b"\n")?;
    for (_, t) in store.iter() {
        out.write_all(&S::to_le_bytes_vec(t.data()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| TensorError::Format(format!("{}: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(TensorError::Format(format!(
            "unexpected format tag {}",
            header.format
        )));
    }
    if header.dtype != S::DTYPE {
        return Err(TensorError::Format(format!(
            "checkpoint holds {}, expected {}",
            header.dtype,
            S::DTYPE
        )));
    }
    let width = std::mem::size_of::<S>();
    let mut store = ParamStore::new();
    for th in &header.tensors {
        let n: usize = th.shape.iter().product();
        let mut buf = vec![0u8; n * width];
        reader
            .read_exact(&mut buf)
            .map_err(|e| TensorError::Format(format!("truncated payload for {}: {e}", th.name)))?;
        store.insert(
            th.name.clone(),
            Tensor::new(th.shape.clone(), S::from_le_bytes_slice(&buf))?,
        )?;
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    store.set_step_count(header.step_count);
    Ok(Checkpoint {
        store,
        metadata: header.metadata,
    })
}
