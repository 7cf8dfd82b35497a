//! Field snapshots: a JSON header next to a raw little-endian `f64` payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DensityField, FieldError, FieldRole, Grid2D};

pub const FIELD_FORMAT: &str = "ksmf-field-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format: String,
    pub grid: Grid2D,
    pub role: FieldRole,
    pub time: f64,
    pub endianness: String,
    pub dtype: String,
    /// Payload file name, relative to the header's directory.
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Writes `<stem>.json` and `<stem>.f64` next to each other. `header_path`
/// must end in `.json`.
pub fn write_snapshot(
    header_path: &Path,
    field: &DensityField,
    time: f64,
    meta: Option<serde_json::Value>,
) -> Result<SnapshotHeader, FieldError> {
    let data_path = header_path.with_extension("f64");
    let data_file = data_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| FieldError::Corrupt(format!("bad path {}", header_path.display())))?
        .to_string();
    let header = SnapshotHeader {
        format: FIELD_FORMAT.to_string(),
        grid: field.grid,
        role: field.role,
        time,
        endianness: "little".to_string(),
        dtype: "f64".to_string(),
        data_file,
        meta,
    };
    let mut bytes = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&data_path, &bytes)?;
    let json = serde_json::to_vec_pretty(&header)
        .map_err(|e| FieldError::Corrupt(format!("header encode: {e}")))?;
    write_atomic(header_path, &json)?;
    Ok(header)
}

/// Reads a snapshot written by [`write_snapshot`], validating the header and
/// the payload length.
pub fn read_snapshot(header_path: &Path) -> Result<(SnapshotHeader, DensityField), FieldError> {
    let text = fs::read(header_path)?;
    let header: SnapshotHeader = serde_json::from_slice(&text)
        .map_err(|e| FieldError::Corrupt(format!("{}: {e}", header_path.display())))?;
    if header.format != FIELD_FORMAT {
        return Err(FieldError::Corrupt(format!("unknown format {:?}", header.format)));
    }
    if header.endianness != "little" || header.dtype != "f64" {
        return Err(FieldError::Corrupt(format!(
            "unsupported encoding {}/{}",
            header.endianness, header.dtype
        )));
    }
    let grid = Grid2D::new(header.grid.half_width, header.grid.n)
        .map_err(|e| FieldError::Corrupt(e.to_string()))?;
    let data_path = data_path_for(header_path, &header);
    let bytes = fs::read(&data_path)?;
    if bytes.len() != grid.len() * 8 {
        return Err(FieldError::Corrupt(format!(
            "{} holds {} bytes, expected {}",
            data_path.display(),
            bytes.len(),
            grid.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = DensityField::new(grid, values, header.role)?;
    Ok((header, field))
}

pub(crate) fn data_path_for(header_path: &Path, header: &SnapshotHeader) -> PathBuf {
    header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file)
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
