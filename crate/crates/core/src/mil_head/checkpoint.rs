//! Head checkpoints: JSON header plus a raw little-endian float32 payload
//! holding `W`, `b`, then the momentum buffers for `W` and `b`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Gradients, HeadParams};
use crate::error::{Error, Result};
use crate::volgrid::FeatureDims;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub dims: FeatureDims,
    pub seed: u64,
    pub steps: u64,
    pub labels: Vec<String>,
    pub dtype: String,
    pub payload: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams,
    pub velocity: Gradients,
    pub labels: Vec<String>,
    pub seed: u64,
    pub steps: u64,
}

const FORMAT: &str = "axialnet-head";

/// Writes `<stem>.ckpt.json` and `<stem>.ckpt.raw`, returning the header path.
pub fn save_checkpoint(ckpt: &Checkpoint, stem: &Path) -> Result<PathBuf> {
    let mut header_path = stem.as_os_str().to_owned();
    header_path.push(".ckpt.json");
    let header_path = PathBuf::from(header_path);
    let mut payload_path = stem.as_os_str().to_owned();
    payload_path.push(".ckpt.raw");
    let payload_path = PathBuf::from(payload_path);

    let p = &ckpt.params;
    let mut bytes = Vec::new();
    for v in p
        .w()
        .iter()
        .chain(p.b().iter())
        .chain(ckpt.velocity.w.iter())
        .chain(ckpt.velocity.b.iter())
    {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    crate::volgrid::write_atomic_bytes(&payload_path, &bytes)?;
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        m: p.m(),
        dims: p.feature_dims(),
        seed: ckpt.seed,
        steps: ckpt.steps,
        labels: ckpt.labels.clone(),
        dtype: "float32".into(),
        payload: payload_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    crate::volgrid::write_atomic_bytes(&header_path, &json)?;
    Ok(header_path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(&text).map_err(|e| Error::header(path, e))?;
    if header.format != FORMAT || header.dtype != "float32" {
        return Err(Error::Unsupported {
            what: "checkpoint format",
            value: format!("{} / {}", header.format, header.dtype),
        });
    }
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let len = header.dims.slice_len();
    let m = header.m;
    let expected = 2 * (m * len + m);
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadSizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    let (w, rest) = values.split_at(m * len);
    let (b, rest) = rest.split_at(m);
    let (vw, vb) = rest.split_at(m * len);
    let shape = |v: &[f64]| Array2::from_shape_vec((m, len), v.to_vec()).expect("sized above");
    let params = HeadParams::new(shape(w), Array1::from(b.to_vec()), header.dims)?;
    let velocity = Gradients {
        w: shape(vw),
        b: Array1::from(vb.to_vec()),
    };
    Ok(Checkpoint {
        params,
        velocity,
        labels: header.labels,
        seed: header.seed,
        steps: header.steps,
    })
}
