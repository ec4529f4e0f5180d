//! Raw tensor files: a little-endian `float32` payload in row-major order
//! next to a JSON sidecar describing its shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32: &str = "float32";
pub const ORDER_ROW_MAJOR: &str = "C";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
    /// 1-based shot index of each leading-axis row. When absent, rows follow
    /// the manifest's shot order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_indices: Option<Vec<u32>>,
}

impl TensorSidecar {
    pub fn new(shape: Vec<usize>, shot_indices: Option<Vec<u32>>) -> Self {
        Self {
            shape,
            dtype: DTYPE_F32.to_string(),
            order: ORDER_ROW_MAJOR.to_string(),
            shot_indices,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Reads `<stem>.bin` and `<stem>.json`, validating dtype, order, payload
/// length, and finiteness.
pub fn read_tensor(bin: &Path, sidecar: &Path) -> Result<(TensorSidecar, Vec<f32>)> {
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: TensorSidecar = serde_json::from_str(&text).map_err(|e| Error::json(sidecar, e))?;
    if meta.dtype != DTYPE_F32 {
        return Err(Error::Format(format!(
            "{}: unsupported dtype {:?}",
            sidecar.display(),
            meta.dtype
        )));
    }
    if meta.order != ORDER_ROW_MAJOR {
        return Err(Error::Format(format!(
            "{}: unsupported order {:?}",
            sidecar.display(),
            meta.order
        )));
    }
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let expected = meta.element_count() * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch in {}: {} bytes, shape {:?} needs {expected}",
            bin.display(),
            bytes.len(),
            meta.shape
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite value {} at element {pos} of {}",
            values[pos],
            bin.display()
        )));
    }
    Ok((meta, values))
}

pub fn write_tensor(bin: &Path, sidecar: &Path, meta: &TensorSidecar, values: &[f32]) -> Result<()> {
    if meta.element_count() != values.len() {
        return Err(Error::Internal(format!(
            "tensor shape {:?} does not hold {} values",
            meta.shape,
            values.len()
        )));
    }
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::json(sidecar, e))?;
    fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))?;
    Ok(())
}
