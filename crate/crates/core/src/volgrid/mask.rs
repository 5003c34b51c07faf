use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::anatomy::Organ;
use crate::error::{Error, Result};

/// Binary voxel mask on the same grid as its source volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask3D {
    pub bits: Array3<bool>,
    pub organ: Organ,
}

/// Inclusive voxel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    /// Extent along each axis in voxels.
    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.lo[a] && idx[a] <= self.hi[a])
    }
}

impl BinaryMask3D {
    pub fn new(bits: Array3<bool>, organ: Organ) -> Self {
        BinaryMask3D { bits, organ }
    }

    pub fn empty(dims: [usize; 3], organ: Organ) -> Self {
        BinaryMask3D {
            bits: Array3::from_elem((dims[0], dims[1], dims[2]), false),
            organ,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        let (s, r, c) = self.bits.dim();
        [s, r, c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for ((s, r, c), &b) in self.bits.indexed_iter() {
            if b {
                any = true;
                for (a, v) in [s, r, c].into_iter().enumerate() {
                    lo[a] = lo[a].min(v);
                    hi[a] = hi[a].max(v);
                }
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }

    fn check_same_grid(&self, other: &BinaryMask3D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "mask grids differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryMask3D, organ: Organ) -> Result<BinaryMask3D> {
        self.check_same_grid(other)?;
        let bits = Zip::from(&self.bits)
            .and(&other.bits)
            .map_collect(|&a, &b| a || b);
        Ok(BinaryMask3D { bits, organ })
    }

    pub fn intersection_count(&self, other: &BinaryMask3D) -> Result<usize> {
        self.check_same_grid(other)?;
        Ok(Zip::from(&self.bits)
            .and(&other.bits)
            .fold(0, |acc, &a, &b| acc + usize::from(a && b)))
    }

    /// Sorensen-Dice overlap. Two empty masks score 1.
    pub fn dice(&self, other: &BinaryMask3D) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let total = self.count() + other.count();
        Ok(if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        })
    }

    /// Intersection over union. Two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask3D) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let union = self.count() + other.count() - inter;
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}

/// The three compartments allowed regions are built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrganMasks {
    pub right_lung: BinaryMask3D,
    pub left_lung: BinaryMask3D,
    pub mediastinum: BinaryMask3D,
}

impl OrganMasks {
    pub fn get(&self, organ: Organ) -> Option<&BinaryMask3D> {
        match organ {
            Organ::RightLung => Some(&self.right_lung),
            Organ::LeftLung => Some(&self.left_lung),
            Organ::Mediastinum => Some(&self.mediastinum),
            Organ::Lungs | Organ::Unspecified => None,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.right_lung.dims()
    }
}
