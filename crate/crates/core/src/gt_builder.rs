//! Allowed-region ground truth at feature-map resolution.
//!
//! Organ masks are downsampled to the `[H, D1, D2]` attention grid and,
//! for every abnormality found in a scan, the masks of its labeled
//! locations are unioned into that abnormality's allowed region.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anatomy::Location;
use crate::error::{Error, Result};
use crate::mil_head::AbsentMode;
use crate::report_labeler::LocationAbnormalityLabels;
use crate::volgrid::{write_atomic_bytes, BinaryMask3D, OrganMasks};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleAlgo {
    #[default]
    Nearest,
    Trilinear,
    Area,
}

impl DownsampleAlgo {
    pub const ALL: [DownsampleAlgo; 3] = [
        DownsampleAlgo::Nearest,
        DownsampleAlgo::Trilinear,
        DownsampleAlgo::Area,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DownsampleAlgo::Nearest => "nearest",
            DownsampleAlgo::Trilinear => "trilinear",
            DownsampleAlgo::Area => "area",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownsampleConfig {
    pub algo: DownsampleAlgo,
    pub dilate: bool,
    /// Interpolated values at or above this become 1.
    pub threshold: f64,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        DownsampleConfig {
            algo: DownsampleAlgo::Nearest,
            dilate: false,
            threshold: 0.5,
        }
    }
}

impl DownsampleConfig {
    /// The six algorithm x dilation combinations.
    pub fn ablation_grid() -> Vec<DownsampleConfig> {
        DownsampleAlgo::ALL
            .into_iter()
            .flat_map(|algo| {
                [false, true].map(|dilate| DownsampleConfig {
                    algo,
                    dilate,
                    ..DownsampleConfig::default()
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub algo: DownsampleAlgo,
    pub dilate: bool,
    pub heuristic_fallback: bool,
}

/// Binary allowed regions `[M, H, D1, D2]`; `true` marks allowed cells.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGroundTruth {
    pub g: Array4<bool>,
    /// Rows left out of the mask loss entirely.
    pub excluded: Vec<bool>,
    pub provenance: Provenance,
}

impl AttentionGroundTruth {
    /// Every cell of every row allowed; the mask loss is then zero.
    pub fn all_allowed(shape: [usize; 4]) -> Self {
        AttentionGroundTruth {
            g: Array4::from_elem(shape, true),
            excluded: vec![false; shape[0]],
            provenance: Provenance {
                algo: DownsampleAlgo::Nearest,
                dilate: false,
                heuristic_fallback: false,
            },
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        let (m, h, a, b) = self.g.dim();
        [m, h, a, b]
    }
}

fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    ((2 * i + 1) * src) / (2 * dst)
}

/// Linear interpolation taps for output index `i`: `(lo, hi, weight of hi)`.
fn linear_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let x = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, x - lo as f64)
}

fn area_range(i: usize, src: usize, dst: usize) -> std::ops::Range<usize> {
    let lo = (i * src) / dst;
    let hi = ((i + 1) * src).div_ceil(dst);
    lo..hi
}

/// One pass of 6-connected binary dilation.
pub fn dilate6(grid: &Array3<bool>) -> Array3<bool> {
    let (s, r, c) = grid.dim();
    Array3::from_shape_fn((s, r, c), |(a, b, cc)| {
        grid[[a, b, cc]]
            || (a > 0 && grid[[a - 1, b, cc]])
            || (a + 1 < s && grid[[a + 1, b, cc]])
            || (b > 0 && grid[[a, b - 1, cc]])
            || (b + 1 < r && grid[[a, b + 1, cc]])
            || (cc > 0 && grid[[a, b, cc - 1]])
            || (cc + 1 < c && grid[[a, b, cc + 1]])
    })
}

/// Downsamples a voxel mask to `target = [H, D1, D2]`.
///
/// Nearest samples the source voxel under each output cell's center.
/// Trilinear interpolates at the cell center (half-pixel convention) and
/// area averages the cell's preimage; both then threshold.
pub fn downsample_mask(
    mask: &BinaryMask3D,
    target: [usize; 3],
    cfg: &DownsampleConfig,
) -> Result<Array3<bool>> {
    let src = mask.dims();
    if (0..3).any(|a| target[a] == 0 || target[a] > src[a]) {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {src:?} to {target:?}"
        )));
    }
    let bits = &mask.bits;
    let val = |a: usize, b: usize, c: usize| if bits[[a, b, c]] { 1.0 } else { 0.0 };
    let shape = (target[0], target[1], target[2]);
    let out = match cfg.algo {
        DownsampleAlgo::Nearest => Array3::from_shape_fn(shape, |(i, j, k)| {
            bits[[
                nearest_index(i, src[0], target[0]),
                nearest_index(j, src[1], target[1]),
                nearest_index(k, src[2], target[2]),
            ]]
        }),
        DownsampleAlgo::Trilinear => Array3::from_shape_fn(shape, |(i, j, k)| {
            let (a0, a1, ta) = linear_taps(i, src[0], target[0]);
            let (b0, b1, tb) = linear_taps(j, src[1], target[1]);
            let (c0, c1, tc) = linear_taps(k, src[2], target[2]);
            let mut v = 0.0;
            for (a, wa) in [(a0, 1.0 - ta), (a1, ta)] {
                for (b, wb) in [(b0, 1.0 - tb), (b1, tb)] {
                    for (c, wc) in [(c0, 1.0 - tc), (c1, tc)] {
                        v += wa * wb * wc * val(a, b, c);
                    }
                }
            }
            v >= cfg.threshold
        }),
        DownsampleAlgo::Area => Array3::from_shape_fn(shape, |(i, j, k)| {
            let (ra, rb, rc) = (
                area_range(i, src[0], target[0]),
                area_range(j, src[1], target[1]),
                area_range(k, src[2], target[2]),
            );
            let n = ra.len() * rb.len() * rc.len();
            let mut sum = 0.0;
            for a in ra {
                for b in rb.clone() {
                    for c in rc.clone() {
                        sum += val(a, b, c);
                    }
                }
            }
            sum / n as f64 >= cfg.threshold
        }),
    };
    Ok(if cfg.dilate { dilate6(&out) } else { out })
}

/// Allowed-region rows from per-row location sets.
///
/// `rows[m]` lists the locations abnormality `m` was labeled at; an empty set
/// means the abnormality is absent from the scan.
pub fn build_gtruth_from_locations(
    rows: &[BTreeSet<Location>],
    masks: &OrganMasks,
    heuristic_fallback: bool,
    target: [usize; 3],
    cfg: &DownsampleConfig,
    absent: AbsentMode,
) -> Result<AttentionGroundTruth> {
    let right = downsample_mask(&masks.right_lung, target, cfg)?;
    let left = downsample_mask(&masks.left_lung, target, cfg)?;
    let medi = downsample_mask(&masks.mediastinum, target, cfg)?;
    let mut g = Array4::from_elem((rows.len(), target[0], target[1], target[2]), false);
    let mut excluded = vec![false; rows.len()];
    for (m, locs) in rows.iter().enumerate() {
        if locs.is_empty() {
            excluded[m] = absent == AbsentMode::Skip;
            continue;
        }
        let mut row = g.index_axis_mut(Axis(0), m);
        for loc in locs {
            match loc.organs() {
                None => row.fill(true),
                Some(organs) => {
                    for organ in organs {
                        let grid = match organ {
                            crate::anatomy::Organ::RightLung => &right,
                            crate::anatomy::Organ::LeftLung => &left,
                            _ => &medi,
                        };
                        row.zip_mut_with(grid, |o, &v| *o |= v);
                    }
                }
            }
        }
    }
    Ok(AttentionGroundTruth {
        g,
        excluded,
        provenance: Provenance {
            algo: cfg.algo,
            dilate: cfg.dilate,
            heuristic_fallback,
        },
    })
}

/// Allowed regions for the head labels `head_labels` (vocabulary label
/// indices) of one scan.
pub fn build_gtruth(
    labels: &LocationAbnormalityLabels,
    head_labels: &[usize],
    masks: &OrganMasks,
    heuristic_fallback: bool,
    target: [usize; 3],
    cfg: &DownsampleConfig,
    absent: AbsentMode,
) -> Result<AttentionGroundTruth> {
    let rows = head_labels
        .iter()
        .map(|&l| labels.locations_of(l))
        .collect::<Result<Vec<_>>>()?;
    build_gtruth_from_locations(&rows, masks, heuristic_fallback, target, cfg, absent)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GtHeader {
    format: String,
    dims: [usize; 4],
    excluded: Vec<bool>,
    provenance: Provenance,
    packing: String,
    payload: String,
}

const GT_FORMAT: &str = "attention-ground-truth";

fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().expect("pushed above") |= 1 << (i % 8);
        }
    }
    out
}

/// Writes `<stem>.gt.json` and the packed `<stem>.gt.raw`.
pub fn save_gtruth(gt: &AttentionGroundTruth, stem: &Path) -> Result<PathBuf> {
    let header_path = PathBuf::from(format!("{}.gt.json", stem.display()));
    let payload_path = PathBuf::from(format!("{}.gt.raw", stem.display()));
    write_atomic_bytes(&payload_path, &pack_bits(gt.g.iter().copied()))?;
    let header = GtHeader {
        format: GT_FORMAT.into(),
        dims: gt.shape(),
        excluded: gt.excluded.clone(),
        provenance: gt.provenance,
        packing: "lsb-first, row-major [m, h, d1, d2]".into(),
        payload: payload_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_atomic_bytes(
        &header_path,
        &serde_json::to_vec_pretty(&header).expect("header serializes"),
    )?;
    Ok(header_path)
}

pub fn load_gtruth(path: &Path) -> Result<AttentionGroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: GtHeader = serde_json::from_str(&text).map_err(|e| Error::header(path, e))?;
    if header.format != GT_FORMAT {
        return Err(Error::Unsupported {
            what: "ground truth format",
            value: header.format,
        });
    }
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n.div_ceil(8) || header.excluded.len() != header.dims[0] {
        return Err(Error::PayloadSizeMismatch {
            expected: n.div_ceil(8),
            actual: bytes.len(),
        });
    }
    let bits: Vec<bool> = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    let [m, h, a, b] = header.dims;
    Ok(AttentionGroundTruth {
        g: Array4::from_shape_vec((m, h, a, b), bits).expect("sized above"),
        excluded: header.excluded,
        provenance: header.provenance,
    })
}

/// Stable short hash of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// On-disk ground-truth cache keyed by scan id and configuration hash.
#[derive(Clone, Debug)]
pub struct GtCache {
    dir: PathBuf,
}

impl GtCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(GtCache { dir })
    }

    pub fn stem(&self, scan_id: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{scan_id}-{key}"))
    }

    /// Loads the cached entry, or builds and stores it.
    pub fn load_or_build(
        &self,
        scan_id: &str,
        key: &str,
        build: impl FnOnce() -> Result<AttentionGroundTruth>,
    ) -> Result<AttentionGroundTruth> {
        let stem = self.stem(scan_id, key);
        let header = PathBuf::from(format!("{}.gt.json", stem.display()));
        if header.exists() {
            return load_gtruth(&header);
        }
        let gt = build()?;
        save_gtruth(&gt, &stem)?;
        Ok(gt)
    }
}
