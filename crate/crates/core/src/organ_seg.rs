//! Unsupervised morphological organ segmentation.
//!
//! Lungs are found by thresholding air, dropping air connected to the grid
//! boundary, filling holes per connected component and removing small
//! components. The lung pair is split at the sagittal midline of its
//! bounding box, and the mediastinum is the central non-lung tissue inside
//! that box. A bounding-box check flags failed scans, which fall back to
//! fixed half-volume masks.

use std::collections::VecDeque;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::anatomy::Organ;
use crate::error::{Error, Result};
use crate::volgrid::{BinaryMask3D, BoundingBox, CtVolume, OrganMasks};

/// Reference lung-pruning volume at 405×420×420 voxels, as a grid fraction.
pub const DEFAULT_MIN_VOLUME_FRACTION: f64 = 1_000_000.0 / (405.0 * 420.0 * 420.0);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets in raster order.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for a in -1isize..=1 {
            for b in -1isize..=1 {
                for c in -1isize..=1 {
                    let n = a.abs() + b.abs() + c.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::TwentySix => n > 0,
                    };
                    if keep {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out
    }

    /// Connectivity of the background that makes hole filling consistent.
    pub fn dual(self) -> Connectivity {
        match self {
            Connectivity::Six => Connectivity::TwentySix,
            Connectivity::TwentySix => Connectivity::Six,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinVolume {
    /// Fraction of all grid voxels.
    Fraction(f64),
    Voxels(usize),
}

impl Default for MinVolume {
    fn default() -> Self {
        MinVolume::Fraction(DEFAULT_MIN_VOLUME_FRACTION)
    }
}

impl MinVolume {
    pub fn voxels(self, dims: [usize; 3]) -> usize {
        match self {
            MinVolume::Fraction(f) => {
                let total = (dims[0] * dims[1] * dims[2]) as f64;
                ((f * total).round() as usize).max(1)
            }
            MinVolume::Voxels(n) => n.max(1),
        }
    }
}

/// Per-lung bounding-box dimension bounds as fractions of the grid dims.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for QcBounds {
    fn default() -> Self {
        QcBounds {
            min: [0.3, 0.2, 0.2],
            max: [1.0, 0.9, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegParams {
    /// Air threshold on normalized intensity.
    pub tau: f32,
    pub connectivity: Connectivity,
    pub min_volume: MinVolume,
    pub qc: QcBounds,
    /// Mediastinal column band as fractions of the lung box width.
    pub mediastinum_band: [f64; 2],
    /// Band shift in box widths; negative moves toward image-left.
    pub mediastinum_shift: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            tau: 0.3,
            connectivity: Connectivity::TwentySix,
            min_volume: MinVolume::default(),
            qc: QcBounds::default(),
            mediastinum_band: [0.25, 0.75],
            mediastinum_shift: -0.125,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau {} not in (0,1)",
                self.tau
            )));
        }
        match self.min_volume {
            MinVolume::Fraction(f) if !(f > 0.0 && f < 1.0) => {
                return Err(Error::InvalidArgument(format!("min volume fraction {f}")));
            }
            MinVolume::Voxels(0) => {
                return Err(Error::InvalidArgument(
                    "min volume must be at least 1 voxel".into(),
                ));
            }
            _ => {}
        }
        let [lo, hi] = self.mediastinum_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "mediastinum band [{lo}, {hi}]"
            )));
        }
        if (0..3).any(|a| self.qc.min[a] > self.qc.max[a]) {
            return Err(Error::InvalidArgument("qc bounds min exceeds max".into()));
        }
        Ok(())
    }
}

fn shift(idx: [usize; 3], off: [isize; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let v = idx[a] as isize + off[a];
        if v < 0 || v >= dims[a] as isize {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}

fn dims_of<T>(a: &Array3<T>) -> [usize; 3] {
    let (s, r, c) = a.dim();
    [s, r, c]
}

/// Connected components of `mask`. Labels start at 1 and follow the raster
/// order of each component's first voxel; 0 is background. Returns the
/// label grid and the component sizes (index `k` holds label `k + 1`).
pub fn label_components(mask: &Array3<bool>, conn: Connectivity) -> (Array3<u32>, Vec<usize>) {
    let dims = dims_of(mask);
    let offsets = conn.offsets();
    let mut labels = Array3::<u32>::zeros(mask.dim());
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for ((a, b, c), &on) in mask.indexed_iter() {
        if !on || labels[[a, b, c]] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[[a, b, c]] = id;
        queue.push_back([a, b, c]);
        while let Some(p) = queue.pop_front() {
            size += 1;
            for &off in &offsets {
                if let Some(q) = shift(p, off, dims) {
                    if mask[q] && labels[q] == 0 {
                        labels[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Fills the holes of a single object: voxels of its padded bounding box not
/// reachable from the box border through non-object voxels.
fn fill_object(object: &Array3<bool>, bbox: &BoundingBox, conn: Connectivity) -> Vec<[usize; 3]> {
    let dims = dims_of(object);
    // padded box, clipped to the grid; clipped sides count as open border
    let lo: [isize; 3] = std::array::from_fn(|a| bbox.lo[a] as isize - 1);
    let hi: [isize; 3] = std::array::from_fn(|a| bbox.hi[a] as isize + 1);
    let ext: [usize; 3] = std::array::from_fn(|a| (hi[a] - lo[a] + 1) as usize);
    let inside = |p: [usize; 3]| -> Option<[usize; 3]> {
        let g: [isize; 3] = std::array::from_fn(|a| p[a] as isize + lo[a]);
        if (0..3).all(|a| g[a] >= 0 && g[a] < dims[a] as isize) {
            Some(std::array::from_fn(|a| g[a] as usize))
        } else {
            None
        }
    };
    let is_object = |p: [usize; 3]| inside(p).is_some_and(|g| object[g]);
    let mut outside = Array3::from_elem((ext[0], ext[1], ext[2]), false);
    let mut queue = VecDeque::new();
    for ((a, b, c), seen) in outside.indexed_iter_mut() {
        let p = [a, b, c];
        let border = (0..3).any(|ax| p[ax] == 0 || p[ax] + 1 == ext[ax]);
        if border && !is_object(p) {
            *seen = true;
            queue.push_back(p);
        }
    }
    let offsets = conn.dual().offsets();
    while let Some(p) = queue.pop_front() {
        for &off in &offsets {
            if let Some(q) = shift(p, off, ext) {
                if !outside[q] && !is_object(q) {
                    outside[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    let mut holes = Vec::new();
    for ((a, b, c), &out) in outside.indexed_iter() {
        if !out && !is_object([a, b, c]) {
            if let Some(g) = inside([a, b, c]) {
                holes.push(g);
            }
        }
    }
    holes
}

fn bbox_of(points: &[[usize; 3]]) -> BoundingBox {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    BoundingBox { lo, hi }
}

fn component_voxels(labels: &Array3<u32>, n: usize) -> Vec<Vec<[usize; 3]>> {
    let mut out = vec![Vec::new(); n];
    for ((a, b, c), &l) in labels.indexed_iter() {
        if l > 0 {
            out[l as usize - 1].push([a, b, c]);
        }
    }
    out
}

/// Fills the internal holes of every connected component of `mask`.
pub fn fill_holes(mask: &Array3<bool>, conn: Connectivity) -> Array3<bool> {
    let (labels, sizes) = label_components(mask, conn);
    let mut out = mask.clone();
    for (k, voxels) in component_voxels(&labels, sizes.len())
        .into_iter()
        .enumerate()
    {
        let id = k as u32 + 1;
        let object = labels.mapv(|l| l == id);
        for h in fill_object(&object, &bbox_of(&voxels), conn) {
            out[h] = true;
        }
    }
    out
}

/// Both lungs as one mask.
pub fn segment_lungs(vol: &CtVolume, params: &SegParams) -> Result<BinaryMask3D> {
    params.validate()?;
    let dims = vol.dims();
    let air = vol.voxels().mapv(|v| v < params.tau);

    let (labels, sizes) = label_components(&air, params.connectivity);
    let mut touches = vec![false; sizes.len()];
    for ((a, b, c), &l) in labels.indexed_iter() {
        let p = [a, b, c];
        if l > 0 && (0..3).any(|ax| p[ax] == 0 || p[ax] + 1 == dims[ax]) {
            touches[l as usize - 1] = true;
        }
    }
    let interior = labels.mapv(|l| l > 0 && !touches[l as usize - 1]);

    let filled = fill_holes(&interior, params.connectivity);
    let (labels, sizes) = label_components(&filled, params.connectivity);
    let min = params.min_volume.voxels(dims);
    let bits = labels.mapv(|l| l > 0 && sizes[l as usize - 1] >= min);
    Ok(BinaryMask3D::new(bits, Organ::Lungs))
}

/// Splits a lung mask at the sagittal midline of its bounding box. Columns
/// whose centre lies left of the midline (image-left, patient right) form
/// the right lung; a column on the midline goes to the left lung.
pub fn split_left_right(lungs: &BinaryMask3D) -> Result<(BinaryMask3D, BinaryMask3D)> {
    let bbox = lungs
        .bounding_box()
        .ok_or_else(|| Error::EmptyMask("cannot split an empty lung mask".into()))?;
    let mid2 = bbox.lo[2] + bbox.hi[2];
    let mut right = lungs.bits.clone();
    let mut left = lungs.bits.clone();
    for ((_, _, c), (r, l)) in lungs
        .bits
        .indexed_iter()
        .map(|(i, _)| i)
        .zip(right.iter_mut().zip(left.iter_mut()))
    {
        if 2 * c < mid2 {
            *l = false;
        } else {
            *r = false;
        }
    }
    Ok((
        BinaryMask3D::new(right, Organ::RightLung),
        BinaryMask3D::new(left, Organ::LeftLung),
    ))
}

/// Non-lung tissue inside the lung bounding box within the central column
/// band.
pub fn mediastinum_mask(
    vol: &CtVolume,
    lungs: &BinaryMask3D,
    right: &BinaryMask3D,
    left: &BinaryMask3D,
    params: &SegParams,
) -> Result<BinaryMask3D> {
    let bbox = lungs
        .bounding_box()
        .ok_or_else(|| Error::EmptyMask("mediastinum needs a nonempty lung mask".into()))?;
    if lungs.dims() != vol.dims() || right.dims() != vol.dims() || left.dims() != vol.dims() {
        return Err(Error::DimensionMismatch(
            "masks and volume differ in shape".into(),
        ));
    }
    let width = (bbox.hi[2] - bbox.lo[2] + 1) as f64;
    let origin = bbox.lo[2] as f64 + params.mediastinum_shift * width;
    let band_lo = origin + params.mediastinum_band[0] * width;
    let band_hi = origin + params.mediastinum_band[1] * width;
    let mut bits = Array3::from_elem(vol.voxels().dim(), false);
    for ((a, b, c), bit) in bits.indexed_iter_mut() {
        let p = [a, b, c];
        let centre = c as f64 + 0.5;
        *bit = bbox.contains(p)
            && !lungs.bits[p]
            && !right.bits[p]
            && !left.bits[p]
            && vol.voxels()[p] >= params.tau
            && centre >= band_lo
            && centre < band_hi;
    }
    Ok(BinaryMask3D::new(bits, Organ::Mediastinum))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub right_bbox_dims: Option<[usize; 3]>,
    pub left_bbox_dims: Option<[usize; 3]>,
    pub pass: bool,
    pub reason: Option<String>,
}

/// Flags a scan whose lungs are missing or implausibly sized.
pub fn qc_check(right: &BinaryMask3D, left: &BinaryMask3D, params: &SegParams) -> QcReport {
    let dims = right.dims();
    let r = right.bounding_box().map(|b| b.dims());
    let l = left.bounding_box().map(|b| b.dims());
    let out_of_bounds = |d: [usize; 3]| {
        (0..3).any(|a| {
            let f = d[a] as f64 / dims[a] as f64;
            f < params.qc.min[a] || f > params.qc.max[a]
        })
    };
    let reason = match (r, l) {
        (None, None) => Some("both lungs absent".to_string()),
        (None, _) => Some("right lung absent".to_string()),
        (_, None) => Some("left lung absent".to_string()),
        (Some(rd), Some(ld)) => {
            if out_of_bounds(rd) {
                Some(format!("right lung bounding box {rd:?} out of bounds"))
            } else if out_of_bounds(ld) {
                Some(format!("left lung bounding box {ld:?} out of bounds"))
            } else {
                None
            }
        }
    };
    QcReport {
        right_bbox_dims: r,
        left_bbox_dims: l,
        pass: reason.is_none(),
        reason,
    }
}

/// Fixed masks: image-left half is the right lung, image-right half the
/// left lung, central half the mediastinum.
pub fn heuristic_mask(dims: [usize; 3]) -> OrganMasks {
    let cols = dims[2];
    let make = |f: &dyn Fn(usize) -> bool, organ| {
        BinaryMask3D::new(
            Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(_, _, c)| f(c)),
            organ,
        )
    };
    OrganMasks {
        right_lung: make(&|c| 2 * c < cols, Organ::RightLung),
        left_lung: make(&|c| 2 * c >= cols, Organ::LeftLung),
        mediastinum: make(&|c| 4 * c >= cols && 4 * c < 3 * cols, Organ::Mediastinum),
    }
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub masks: OrganMasks,
    pub qc: QcReport,
    /// True when `masks` are the heuristic fallback.
    pub heuristic: bool,
}

/// Full pipeline with QC fallback.
pub fn segment_organs(vol: &CtVolume, params: &SegParams) -> Result<Segmentation> {
    let lungs = segment_lungs(vol, params)?;
    let dims = vol.dims();
    if lungs.is_empty() {
        let empty_r = BinaryMask3D::empty(dims, Organ::RightLung);
        let empty_l = BinaryMask3D::empty(dims, Organ::LeftLung);
        return Ok(Segmentation {
            masks: heuristic_mask(dims),
            qc: qc_check(&empty_r, &empty_l, params),
            heuristic: true,
        });
    }
    let (right, left) = split_left_right(&lungs)?;
    let qc = qc_check(&right, &left, params);
    if !qc.pass {
        return Ok(Segmentation {
            masks: heuristic_mask(dims),
            qc,
            heuristic: true,
        });
    }
    let mediastinum = mediastinum_mask(vol, &lungs, &right, &left, params)?;
    Ok(Segmentation {
        masks: OrganMasks {
            right_lung: right,
            left_lung: left,
            mediastinum,
        },
        qc,
        heuristic: false,
    })
}
