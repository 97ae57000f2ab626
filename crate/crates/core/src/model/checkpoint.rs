//! Binary checkpoint: `MGCK`, a little-endian u32 format version, a u64
//! header length, a JSON header, then every tensor's raw little-endian
//! values in layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::real::{FloatMode, Real};

const MAGIC: &[u8; 4] = b"MGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub tokenizer_hash: String,
    pub step: u64,
    pub dtype: FloatMode,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint<F: Real>(
    params: &ModelParams<F>,
    tokenizer_hash: &str,
    step: u64,
    path: &Path,
) -> Result<()> {
    let header = Header {
        meta: CheckpointMeta {
            config: params.config().clone(),
            tokenizer_hash: tokenizer_hash.to_string(),
            step,
            dtype: F::MODE,
        },
        tensors: params
            .config()
            .layout()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + params.param_count() * F::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, converting stored values to `F`. When
/// `expected_tokenizer` is given, a different stored hash is refused.
pub fn load_checkpoint<F: Real>(
    path: &Path,
    expected_tokenizer: Option<&str>,
) -> Result<(ModelParams<F>, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let corrupt = |m: &str| Error::CorruptCheckpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing MGCK magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    if let Some(expected) = expected_tokenizer {
        if expected != header.meta.tokenizer_hash {
            return Err(Error::TokenizerHashMismatch {
                expected: expected.to_string(),
                found: header.meta.tokenizer_hash,
            });
        }
    }
    let width = match header.meta.dtype {
        FloatMode::F32 => 4,
        FloatMode::F64 => 8,
    };
    let layout = header.meta.config.layout();
    if layout.len() != header.tensors.len()
        || layout
            .iter()
            .zip(&header.tensors)
            .any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err(corrupt("tensor table does not match the config"));
    }
    let total: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let payload = &bytes[16 + hlen..];
    if payload.len() != total * width {
        return Err(corrupt(&format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            total * width
        )));
    }
    let mut values = payload.chunks_exact(width).map(|c| match header.meta.dtype {
        FloatMode::F32 => F::from_f64_lossy(f64::from(f32::read_le(c))),
        FloatMode::F64 => F::from_f64_lossy(f64::read_le(c)),
    });
    let tensors = layout
        .iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), values.by_ref().take(n).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let params = ModelParams::from_tensors(header.meta.config.clone(), tensors)?;
    Ok((params, header.meta))
}
