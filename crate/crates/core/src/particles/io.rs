//! Ensemble snapshots: a JSON header next to packed little-endian `(x, y)` pairs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParticleEnsemble, ParticleError, SystemTag};
use crate::field::io::write_atomic;

pub const ENSEMBLE_FORMAT: &str = "ksmf-ensemble-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleHeader {
    pub format: String,
    pub n: usize,
    pub t: f64,
    pub step: u64,
    pub seed: u64,
    pub system_tag: SystemTag,
    pub endianness: String,
    pub dtype: String,
    pub data_file: String,
    /// Stream ids, omitted when they are `0..n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u64>>,
}

pub fn write_ensemble(header_path: &Path, ens: &ParticleEnsemble) -> Result<EnsembleHeader, ParticleError> {
    let data_path = header_path.with_extension("f64");
    let data_file = data_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ParticleError::Corrupt(format!("bad path {}", header_path.display())))?
        .to_string();
    let identity = ens.ids.iter().enumerate().all(|(i, &id)| id == i as u64);
    let header = EnsembleHeader {
        format: ENSEMBLE_FORMAT.to_string(),
        n: ens.len(),
        t: ens.t,
        step: ens.step,
        seed: ens.seed,
        system_tag: ens.system,
        endianness: "little".into(),
        dtype: "f64".into(),
        data_file,
        ids: (!identity).then(|| ens.ids.clone()),
    };
    let mut bytes = Vec::with_capacity(ens.len() * 16);
    for p in &ens.positions {
        bytes.extend_from_slice(&p[0].to_le_bytes());
        bytes.extend_from_slice(&p[1].to_le_bytes());
    }
    write_atomic(&data_path, &bytes)?;
    let json = serde_json::to_vec_pretty(&header)
        .map_err(|e| ParticleError::Corrupt(format!("header encode: {e}")))?;
    write_atomic(header_path, &json)?;
    Ok(header)
}

pub fn read_ensemble(header_path: &Path) -> Result<ParticleEnsemble, ParticleError> {
    let text = fs::read(header_path)?;
    let h: EnsembleHeader = serde_json::from_slice(&text)
        .map_err(|e| ParticleError::Corrupt(format!("{}: {e}", header_path.display())))?;
    if h.format != ENSEMBLE_FORMAT || h.endianness != "little" || h.dtype != "f64" {
        return Err(ParticleError::Corrupt(format!(
            "unsupported encoding {}/{}/{}",
            h.format, h.endianness, h.dtype
        )));
    }
    let data_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&h.data_file);
    let bytes = fs::read(&data_path)?;
    if bytes.len() != h.n * 16 {
        return Err(ParticleError::Corrupt(format!(
            "{} holds {} bytes, expected {}",
            data_path.display(),
            bytes.len(),
            h.n * 16
        )));
    }
    let positions = bytes
        .chunks_exact(16)
        .map(|c| {
            [
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            ]
        })
        .collect();
    let ids = match h.ids {
        Some(ids) if ids.len() == h.n => ids,
        Some(ids) => {
            return Err(ParticleError::Corrupt(format!("{} ids for {} particles", ids.len(), h.n)))
        }
        None => (0..h.n as u64).collect(),
    };
    Ok(ParticleEnsemble {
        positions,
        ids,
        t: h.t,
        step: h.step,
        system: h.system_tag,
        seed: h.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::GaussianMixture;
    use crate::particles::sample_initial;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = sample_initial(&GaussianMixture::single(0.5), 33, 9).unwrap();
        let path = dir.path().join("e.json");
        write_ensemble(&path, &e).unwrap();
        assert_eq!(read_ensemble(&path).unwrap(), e);
        e.ids.reverse();
        e.system = SystemTag::Limiting;
        write_ensemble(&path, &e).unwrap();
        assert_eq!(read_ensemble(&path).unwrap(), e);
        fs::write(dir.path().join("e.f64"), [1u8; 17]).unwrap();
        assert!(matches!(read_ensemble(&path), Err(ParticleError::Corrupt(_))));
    }
}
