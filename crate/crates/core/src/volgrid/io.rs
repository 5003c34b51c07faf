//! Raw little-endian payload + JSON sidecar header.
//!
//! A volume `<stem>` is stored as `<stem>.vol.json` and `<stem>.vol.raw`;
//! masks as `<stem>.mask.json` and `<stem>.mask.raw`. Payloads are row-major
//! `[slice, row, col]`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{BinaryMask3D, CtVolume};
use crate::anatomy::Organ;
use crate::error::{Error, Result};

pub const VOLUME_HEADER_SUFFIX: &str = ".vol.json";
pub const MASK_HEADER_SUFFIX: &str = ".mask.json";
const VOLUME_PAYLOAD_SUFFIX: &str = ".vol.raw";
const MASK_PAYLOAD_SUFFIX: &str = ".mask.raw";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub scan_id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    #[serde(default)]
    pub clamp: bool,
    #[serde(default = "little")]
    pub byte_order: String,
    /// Payload file name, relative to the header's directory.
    pub payload: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub organ: Organ,
    pub dims: [usize; 3],
    pub dtype: String,
    pub params_hash: String,
    pub payload: String,
}

fn little() -> String {
    "little".to_string()
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::header(path, e))
}

fn payload_path(header_path: &Path, payload: &str) -> PathBuf {
    header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(payload)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = with_suffix(path, ".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Saves `vol` under `stem`, returning the header path.
pub fn save_volume(vol: &CtVolume, stem: &Path) -> Result<PathBuf> {
    let header_path = with_suffix(stem, VOLUME_HEADER_SUFFIX);
    let payload_path = with_suffix(stem, VOLUME_PAYLOAD_SUFFIX);
    let mut bytes = Vec::with_capacity(vol.voxels().len() * 4);
    for v in vol.voxels().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&payload_path, &bytes)?;
    let header = VolumeHeader {
        scan_id: vol.scan_id().to_string(),
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype: "float32".into(),
        clamp: false,
        byte_order: little(),
        payload: file_name(&payload_path),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_atomic(&header_path, &json)?;
    Ok(header_path)
}

/// Loads a volume from its `.vol.json` header.
///
/// Out-of-range intensities are clamped when the header sets `clamp`, and
/// rejected otherwise.
pub fn load_volume(path: &Path) -> Result<CtVolume> {
    let header: VolumeHeader = read_header(path)?;
    if header.dtype != "float32" {
        return Err(Error::Unsupported {
            what: "volume dtype",
            value: header.dtype,
        });
    }
    if header.byte_order != "little" {
        return Err(Error::Unsupported {
            what: "byte order",
            value: header.byte_order,
        });
    }
    let raw_path = payload_path(path, &header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected: usize = header.dims.iter().product();
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let mut values = Vec::with_capacity(expected);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        let v = if header.clamp {
            v.clamp(0.0, 1.0)
        } else if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { index, value: v });
        } else {
            v
        };
        values.push(v);
    }
    let [s, r, c] = header.dims;
    let voxels = Array3::from_shape_vec((s, r, c), values)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    CtVolume::new(header.scan_id, voxels, header.spacing)
}

/// Saves a mask as one `u8` per voxel under `stem`, returning the header path.
pub fn save_mask(mask: &BinaryMask3D, stem: &Path, params_hash: &str) -> Result<PathBuf> {
    let header_path = with_suffix(stem, MASK_HEADER_SUFFIX);
    let payload_path = with_suffix(stem, MASK_PAYLOAD_SUFFIX);
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| u8::from(b)).collect();
    write_atomic(&payload_path, &bytes)?;
    let header = MaskHeader {
        organ: mask.organ,
        dims: mask.dims(),
        dtype: "uint8".into(),
        params_hash: params_hash.to_string(),
        payload: file_name(&payload_path),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_atomic(&header_path, &json)?;
    Ok(header_path)
}

pub fn load_mask(path: &Path) -> Result<(BinaryMask3D, MaskHeader)> {
    let header: MaskHeader = read_header(path)?;
    if header.dtype != "uint8" {
        return Err(Error::Unsupported {
            what: "mask dtype",
            value: header.dtype,
        });
    }
    let raw_path = payload_path(path, &header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected: usize = header.dims.iter().product();
    if bytes.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let bits = bytes
        .iter()
        .enumerate()
        .map(|(index, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidArgument(format!(
                "mask byte {b} at index {index} is not 0 or 1"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let [s, r, c] = header.dims;
    let bits = Array3::from_shape_vec((s, r, c), bits)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok((BinaryMask3D::new(bits, header.organ), header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_raw(dir: &Path, name: &str, dims: [usize; 3], values: &[f32], clamp: bool) -> PathBuf {
        let mut bytes = Vec::new();
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.vol.raw")), bytes).unwrap();
        let header = VolumeHeader {
            scan_id: name.into(),
            dims,
            spacing: [1.0; 3],
            dtype: "float32".into(),
            clamp,
            byte_order: "little".into(),
            payload: format!("{name}.vol.raw"),
        };
        let path = dir.join(format!("{name}.vol.json"));
        fs::write(&path, serde_json::to_string(&header).unwrap()).unwrap();
        path
    }

    #[test]
    fn constant_payload_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(dir.path(), "c", [4, 4, 4], &[0.5; 64], false);
        let vol = load_volume(&path).unwrap();
        assert_eq!(vol.dims(), [4, 4, 4]);
        assert_eq!(vol.voxels().len(), 64);
        assert!(vol.voxels().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn short_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_raw(dir.path(), "s", [4, 4, 4], &[0.5; 63], false);
        assert!(matches!(
            load_volume(&path),
            Err(Error::PayloadSizeMismatch {
                expected: 64,
                actual: 63
            })
        ));
    }

    #[test]
    fn clamp_flag_controls_out_of_range_handling() {
        let dir = tempfile::tempdir().unwrap();
        let values = [-0.25, 0.5, 1.75, 0.0, 1.0, 0.5, 0.5, 0.5];
        let strict = write_raw(dir.path(), "strict", [2, 2, 2], &values, false);
        assert!(matches!(
            load_volume(&strict),
            Err(Error::OutOfRange { index: 0, .. })
        ));
        let lenient = write_raw(dir.path(), "lenient", [2, 2, 2], &values, true);
        let vol = load_volume(&lenient).unwrap();
        assert_eq!(vol.voxels()[[0, 0, 0]], 0.0);
        assert_eq!(vol.voxels()[[0, 1, 0]], 1.0);
    }

    #[test]
    fn non_finite_payload_is_rejected_even_with_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let mut values = [0.5f32; 8];
        values[5] = f32::INFINITY;
        let path = write_raw(dir.path(), "inf", [2, 2, 2], &values, true);
        assert!(matches!(
            load_volume(&path),
            Err(Error::NonFinite { index: 5 })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_volume(&dir.path().join("nope.vol.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn random_volume_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let voxels = Array3::from_shape_fn((5, 6, 7), |_| rng.random::<f32>());
        let vol = CtVolume::new("rt", voxels, [0.7, 0.8, 0.8]).unwrap();
        let header = save_volume(&vol, &dir.path().join("rt")).unwrap();
        let back = load_volume(&header).unwrap();
        assert_eq!(back.scan_id(), "rt");
        assert_eq!(back.spacing(), vol.spacing());
        for (a, b) in vol.voxels().iter().zip(back.voxels().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits = Array3::from_shape_fn((3, 4, 5), |_| rng.random::<bool>());
        let mask = BinaryMask3D::new(bits, Organ::LeftLung);
        let path = save_mask(&mask, &dir.path().join("m"), "abc").unwrap();
        let (back, header) = load_mask(&path).unwrap();
        assert_eq!(back, mask);
        assert_eq!(header.params_hash, "abc");
    }
}
