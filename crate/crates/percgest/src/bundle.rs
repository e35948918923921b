//! Model bundle files.
//!
//! Layout: `b"PGWB"`, u16 LE version, u32 LE header length, header as canonical
//! JSON (sorted keys, no whitespace), then every layer's parameters as LE f32 in
//! header order.

use std::fs;
use std::path::Path;

use percgest_core::eval::PcaBasis;
use percgest_core::models::{ArchOptions, ArchitectureId, BlockSpec, FeatureMeta, HeadConfig, ModelBundle, Network, TrainingMeta};
use percgest_core::nn::describe;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGWB";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PayloadEntry {
    block: String,
    layer: usize,
    bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture_id: ArchitectureId,
    head_config: HeadConfig,
    options: ArchOptions,
    blocks: Vec<BlockSpec>,
    payload: Vec<PayloadEntry>,
    features: FeatureMeta,
    training: Option<TrainingMeta>,
    projection: Option<PcaBasis>,
}

/// Serialises `value` with sorted keys and no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    // `serde_json::Map` is ordered by key, so a round trip through `Value` sorts every object.
    Ok(serde_json::to_vec(&serde_json::to_value(value)?)?)
}

pub fn to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    if bundle.params.len() != bundle.expected_param_len() {
        return Err(Error::bundle(0, format!("{} parameters for {} declared", bundle.params.len(), bundle.expected_param_len())));
    }
    let payload = bundle
        .layer_param_counts()
        .map(|(block, layer, _, n)| PayloadEntry { block: block.to_string(), layer, bytes: n * 4 })
        .collect();
    let header = Header {
        architecture_id: bundle.architecture,
        head_config: bundle.head,
        options: bundle.options,
        blocks: bundle.blocks.clone(),
        payload,
        features: bundle.features,
        training: bundle.training.clone(),
        projection: bundle.projection.clone(),
    };
    let json = canonical_json(&header)?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::bundle(6, "header too large"))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + bundle.params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in &bundle.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates a bundle; nothing is returned unless every check passes.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < PREAMBLE {
        return Err(Error::bundle(bytes.len(), format!("file ends inside the {PREAMBLE}-byte preamble")));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::bundle(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::bundle(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::bundle(bytes.len(), format!("file ends inside the {header_len}-byte header")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::bundle(PREAMBLE + e.column().saturating_sub(1), format!("header: {e}")))?;

    let bundle_blocks = header.blocks;
    let layers: Vec<(&BlockSpec, usize)> = bundle_blocks.iter().flat_map(|b| (0..b.layers.len()).map(move |i| (b, i))).collect();
    if layers.len() != header.payload.len() {
        return Err(Error::bundle(PREAMBLE, format!("{} payload entries for {} layers", header.payload.len(), layers.len())));
    }
    let mut offset = header_end;
    for (entry, (block, i)) in header.payload.iter().zip(&layers) {
        let spec = &block.layers[*i];
        let name = format!("{}[{}] {}", block.name, i, describe(spec));
        if entry.block != block.name || entry.layer != *i {
            return Err(Error::bundle(offset, format!("payload entry {}[{}] out of order, expected layer {name}", entry.block, entry.layer)));
        }
        let expected = spec.param_len() * 4;
        if entry.bytes != expected {
            return Err(Error::bundle(offset, format!("layer {name} declares {} payload bytes, its shape needs {expected}", entry.bytes)));
        }
        if offset + entry.bytes > bytes.len() {
            return Err(Error::bundle(bytes.len(), format!("file truncated inside layer {name}")));
        }
        offset += entry.bytes;
    }
    if offset != bytes.len() {
        return Err(Error::bundle(offset, format!("{} trailing bytes after the payload", bytes.len() - offset)));
    }
    let params = bytes[header_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let bundle = ModelBundle {
        architecture: header.architecture_id,
        head: header.head_config,
        options: header.options,
        blocks: bundle_blocks,
        params,
        features: header.features,
        training: header.training,
        projection: header.projection,
    };
    Network::from_bundle(&bundle).map_err(|e| Error::bundle(PREAMBLE, format!("inconsistent model: {e}")))?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = to_bytes(bundle)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
