//! Binary checkpoint container.
//!
//! Layout: the 8 magic bytes `CTALVAE1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every parameter array as little-endian
//! `f32` in directory order. Array offsets count bytes from the start of the
//! array section.

use std::fs;
use std::path::Path;

use ctalvae_core::adaptors::DomainId;
use ctalvae_core::model::FORMAT_VERSION;
use ctalvae_core::vae::CoreConfig;
use ctalvae_core::{ModelBundle, ModelKind, Normalizer};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, AppError, Result};

pub const MAGIC: &[u8; 8] = b"CTALVAE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub kind: ModelKind,
    pub core: CoreConfig,
    pub domains: Vec<DomainEntry>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub name: DomainId,
    pub dim: usize,
    pub normalizer: Option<Normalizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Checkpoint(msg.into())
}

pub fn header_of(bundle: &ModelBundle) -> Header {
    let mut offset = 0u64;
    let arrays = bundle
        .store
        .ids()
        .map(|id| {
            let info = bundle.store.info(id);
            let entry = ArrayEntry {
                name: info.name.clone(),
                shape: info.shape.clone(),
                offset,
            };
            offset += 4 * bundle.store.value(id).len() as u64;
            entry
        })
        .collect();
    Header {
        format_version: bundle.version,
        kind: bundle.kind,
        core: *bundle.config(),
        domains: bundle
            .adaptors
            .iter()
            .map(|a| DomainEntry {
                name: a.domain.clone(),
                dim: a.domain_dim,
                normalizer: bundle.normalizer(&a.domain).cloned(),
            })
            .collect(),
        arrays,
    }
}

pub fn to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_of(bundle))?;
    let len = u32::try_from(header.len()).map_err(|_| bad("header too large"))?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * bundle.store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&header);
    for id in bundle.store.ids() {
        for v in bundle.store.value(id) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing CTALVAE1 magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let data = &bytes[12 + len..];

    let mut bundle = ModelBundle::new(header.kind, header.core)?;
    for d in &header.domains {
        bundle.add_domain(d.name.clone(), d.dim)?;
    }
    for d in &header.domains {
        if let Some(n) = &d.normalizer {
            bundle.set_normalizer(d.name.clone(), n.clone())?;
        }
    }
    if header.arrays.len() != bundle.store.len() {
        return Err(bad(format!(
            "expected {} arrays, found {}",
            bundle.store.len(),
            header.arrays.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (id, entry) in bundle.store.ids().zip(&header.arrays).collect::<Vec<_>>() {
        let info = bundle.store.info(id);
        if info.name != entry.name || info.shape != entry.shape {
            return Err(bad(format!(
                "array `{}` {:?} does not match expected `{}` {:?}",
                entry.name, entry.shape, info.name, info.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(bad(format!("array `{}` at unexpected offset {}", entry.name, entry.offset)));
        }
        let n = bundle.store.value(id).len();
        let start = entry.offset as usize;
        let raw = data
            .get(start..start + 4 * n)
            .ok_or_else(|| bad(format!("array `{}` truncated", entry.name)))?;
        for (dst, chunk) in bundle.store.value_mut(id).iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
        expected_offset += 4 * n as u64;
    }
    if data.len() as u64 != expected_offset {
        return Err(bad("trailing bytes after arrays"));
    }
    Ok(bundle)
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(bundle)?).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    from_bytes(&fs::read(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(bundle: &mut ModelBundle) {
        let ids: Vec<_> = bundle.store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            for (i, v) in bundle.store.value_mut(id).iter_mut().enumerate() {
                *v = ((k * 31 + i * 7) % 17) as f64 / 17.0 - 0.5;
            }
        }
    }

    fn bundle() -> ModelBundle {
        let core = CoreConfig {
            core_dim: 3,
            hidden: 4,
            latent: 2,
            seq_len: 5,
        };
        let mut b = ModelBundle::new(ModelKind::Vae, core).unwrap();
        b.add_domain(DomainId::source(), 6).unwrap();
        b.add_domain(DomainId::target(), 2).unwrap();
        b.set_normalizer(
            DomainId::source(),
            Normalizer {
                mean: vec![0.1; 6],
                std: vec![1.0 / 3.0; 6],
            },
        )
        .unwrap();
        fill(&mut b);
        b
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let b = bundle();
        let bytes = to_bytes(&b).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded).unwrap(), bytes);
        assert_eq!(loaded.normalizer(&DomainId::source()), b.normalizer(&DomainId::source()));
        assert!(loaded.normalizer(&DomainId::target()).is_none());
        assert_eq!(loaded.core_bytes(), b.core_bytes());
    }

    #[test]
    fn starts_with_magic_and_length() {
        let bytes = to_bytes(&bundle()).unwrap();
        assert_eq!(&bytes[..8], b"CTALVAE1");
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header.arrays[0].name, "core.encoder.w_ih");
        assert_eq!(header.arrays[0].offset, 0);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&bundle()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"NOTACKPT\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
