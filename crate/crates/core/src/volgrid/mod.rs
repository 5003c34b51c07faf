//! Dense volume containers, raw volume I/O, the phantom generator and the
//! toy featurizer.
//!
//! Grids are row-major `[slice, row, col]` throughout. Column index 0 is the
//! image-left edge, which is the patient's right side.

mod featurize;
mod io;
mod mask;
mod phantom;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use featurize::{toy_featurize, FEATURE_CHANNELS};
pub(crate) use io::write_atomic as write_atomic_bytes;
pub use io::{
    load_mask, load_volume, save_mask, save_volume, MaskHeader, VolumeHeader, MASK_HEADER_SUFFIX,
    VOLUME_HEADER_SUFFIX,
};
pub use mask::{BinaryMask3D, BoundingBox, OrganMasks};
pub use phantom::{
    generate_phantom, Blob, BoxRegion, Confounder, Ellipsoid, Phantom, PhantomSpec, PlantedLabels,
    PlantedLesion, AIR_INTENSITY, BODY_INTENSITY, LUNG_INTENSITY, MEDIASTINUM_INTENSITY,
};

/// Default number of adjacent slices grouped into one feature slice.
pub const DEFAULT_SLICE_GROUP: usize = 3;

/// A normalized CT volume, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CtVolume {
    scan_id: String,
    voxels: Array3<f32>,
    spacing: [f64; 3],
}

impl CtVolume {
    pub fn new(scan_id: impl Into<String>, voxels: Array3<f32>, spacing: [f64; 3]) -> Result<Self> {
        for (index, &v) in voxels.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { index, value: v });
            }
        }
        if voxels.is_empty() {
            return Err(Error::DimensionMismatch(
                "volume has a zero-length axis".into(),
            ));
        }
        Ok(CtVolume {
            scan_id: scan_id.into(),
            voxels: voxels.as_standard_layout().into_owned(),
            spacing,
        })
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        let (s, r, c) = self.voxels.dim();
        [s, r, c]
    }
}

/// Shape of a feature map stack `[H, F, D1, D2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureDims {
    pub h: usize,
    pub f: usize,
    pub d1: usize,
    pub d2: usize,
}

impl FeatureDims {
    /// Length of one flattened slice representation, `F * D1 * D2`.
    pub fn slice_len(&self) -> usize {
        self.f * self.d1 * self.d2
    }

    /// Shape of a per-abnormality explanation, `[H, D1, D2]`.
    pub fn attention_shape(&self) -> [usize; 3] {
        [self.h, self.d1, self.d2]
    }
}

/// Low-dimensional scan representation `Z`, shape `[H, F, D1, D2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    values: Array4<f64>,
}

impl FeatureMapStack {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        if values.shape().contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "feature map stack shape {:?} has a zero axis",
                values.shape()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMapStack {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn dims(&self) -> FeatureDims {
        let (h, f, d1, d2) = self.values.dim();
        FeatureDims { h, f, d1, d2 }
    }

    /// Slice `h` flattened in `[f, d1, d2]` row-major order.
    pub fn slice_flat(&self, h: usize) -> &[f64] {
        let len = self.dims().slice_len();
        let all = self
            .values
            .as_slice()
            .expect("feature maps are stored in standard layout");
        &all[h * len..(h + 1) * len]
    }

    pub fn as_flat(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("feature maps are stored in standard layout")
    }
}
