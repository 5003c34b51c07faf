//! Synthetic chest phantoms with planted lesions and an optional confounder.

use std::collections::BTreeSet;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryMask3D, CtVolume, OrganMasks};
use crate::anatomy::{Location, Organ};
use crate::error::{Error, Result};

pub const AIR_INTENSITY: f32 = 0.0;
pub const LUNG_INTENSITY: f32 = 0.1;
pub const BODY_INTENSITY: f32 = 0.5;
pub const MEDIASTINUM_INTENSITY: f32 = 0.55;

/// Axis-aligned ellipsoid in voxel coordinates `[slice, row, col]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, idx: [usize; 3]) -> bool {
        let acc: f64 = (0..3)
            .map(|a| ((idx[a] as f64 - self.center[a]) / self.radii[a]).powi(2))
            .sum();
        acc <= 1.0
    }
}

/// Half-open voxel box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoxRegion {
    pub fn contains(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.lo[a] && idx[a] < self.hi[a])
    }
}

/// Spherical intensity bump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Blob {
    pub fn contains(&self, idx: [usize; 3]) -> bool {
        let d2: f64 = (0..3)
            .map(|a| {
                let d = idx[a] as f64 - self.center[a];
                d * d
            })
            .sum();
        d2 <= self.radius * self.radius
    }

    fn voxels(&self, dims: [usize; 3]) -> Vec<[usize; 3]> {
        let range = |a: usize| {
            let lo = (self.center[a] - self.radius).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radius).ceil().max(0.0) as usize).min(dims[a] - 1);
            lo..=hi
        };
        let mut out = Vec::new();
        for s in range(0) {
            for r in range(1) {
                for c in range(2) {
                    if self.contains([s, r, c]) {
                        out.push([s, r, c]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedLesion {
    /// Canonical abnormality label name.
    pub abnormality: String,
    pub location: Location,
    pub blob: Blob,
    pub delta: f32,
}

/// An unlabeled bump that the corpus generator correlates with one abnormality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confounder {
    pub location: Location,
    pub blob: Blob,
    pub delta: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub scan_id: String,
    pub dims: [usize; 3],
    pub right_lung: Ellipsoid,
    pub left_lung: Ellipsoid,
    /// Mediastinal box; lung voxels inside it stay lung.
    pub mediastinum: BoxRegion,
    /// In-plane `(row, col)` radii of an elliptic body cylinder; air outside.
    /// `None` fills the whole grid with body tissue.
    pub body_radii: Option<[f64; 2]>,
    pub lesions: Vec<PlantedLesion>,
    pub confounder: Option<Confounder>,
    /// Half-width of uniform intensity noise.
    pub noise: f32,
    pub seed: u64,
}

/// Exactly the planted `(abnormality, location)` pairs.
pub type PlantedLabels = BTreeSet<(String, Location)>;

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: CtVolume,
    pub masks: OrganMasks,
    pub labels: PlantedLabels,
}

impl PhantomSpec {
    /// A symmetric chest on a `dims` grid with no lesions.
    pub fn standard(scan_id: impl Into<String>, dims: [usize; 3], seed: u64) -> Self {
        let [s, r, c] = dims.map(|d| d as f64);
        let mid_s = (s - 1.0) / 2.0;
        let mid_r = (r - 1.0) / 2.0;
        let lung_radii = [0.42 * s, 0.25 * r, 0.14 * c];
        PhantomSpec {
            scan_id: scan_id.into(),
            dims,
            right_lung: Ellipsoid {
                center: [mid_s, mid_r, 0.27 * c - 0.5],
                radii: lung_radii,
            },
            left_lung: Ellipsoid {
                center: [mid_s, mid_r, 0.73 * c - 0.5],
                radii: lung_radii,
            },
            mediastinum: BoxRegion {
                lo: [
                    (0.1 * s).round() as usize,
                    (0.27 * r).round() as usize,
                    (0.26 * c).round() as usize,
                ],
                hi: [
                    (0.9 * s).round() as usize,
                    (0.73 * r).round() as usize,
                    (0.6 * c).round() as usize,
                ],
            },
            body_radii: Some([0.45 * r, 0.47 * c]),
            lesions: Vec::new(),
            confounder: None,
            noise: 0.02,
            seed,
        }
    }

    fn body_contains(&self, idx: [usize; 3]) -> bool {
        match self.body_radii {
            None => true,
            Some([rr, rc]) => {
                let cr = (self.dims[1] as f64 - 1.0) / 2.0;
                let cc = (self.dims[2] as f64 - 1.0) / 2.0;
                let dr = (idx[1] as f64 - cr) / rr;
                let dc = (idx[2] as f64 - cc) / rc;
                dr * dr + dc * dc <= 1.0
            }
        }
    }

    /// The mediastinal box minus both lungs.
    pub fn mediastinum_contains(&self, idx: [usize; 3]) -> bool {
        self.mediastinum.contains(idx)
            && !self.right_lung.contains(idx)
            && !self.left_lung.contains(idx)
    }

    fn region_contains(&self, loc: Location, idx: [usize; 3]) -> bool {
        match loc {
            Location::RightLung => self.right_lung.contains(idx),
            Location::LeftLung => self.left_lung.contains(idx),
            Location::LungUnspecified => {
                self.right_lung.contains(idx) || self.left_lung.contains(idx)
            }
            Location::Heart | Location::GreatVessel | Location::Mediastinum => {
                self.mediastinum_contains(idx)
            }
            Location::Other => self.body_contains(idx),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "phantom grid has a zero axis".into(),
            ));
        }
        if self.right_lung.center[2] >= self.left_lung.center[2] {
            return Err(Error::InvalidArgument(
                "right lung must sit at smaller column indices than the left lung".into(),
            ));
        }
        if (0..3).any(|a| {
            self.mediastinum.hi[a] > self.dims[a]
                || self.mediastinum.lo[a] >= self.mediastinum.hi[a]
        }) {
            return Err(Error::InvalidArgument(
                "mediastinal box is empty or outside the grid".into(),
            ));
        }
        if self
            .right_lung
            .radii
            .iter()
            .chain(&self.left_lung.radii)
            .any(|&r| r <= 0.0)
        {
            return Err(Error::InvalidArgument("lung radii must be positive".into()));
        }
        Ok(())
    }
}

/// Renders `spec` and returns the volume, the exact organ supports and the
/// planted labels.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let [s, r, c] = spec.dims;
    let shape = (s, r, c);
    let mut right = Array3::from_elem(shape, false);
    let mut left = Array3::from_elem(shape, false);
    let mut medi = Array3::from_elem(shape, false);
    let mut vox = Array3::from_elem(shape, AIR_INTENSITY);

    for ((a, b, cc), v) in vox.indexed_iter_mut() {
        let idx = [a, b, cc];
        let in_right = spec.right_lung.contains(idx);
        let in_left = spec.left_lung.contains(idx);
        let in_medi = spec.mediastinum_contains(idx);
        if in_right && in_left {
            return Err(Error::InvalidArgument(format!(
                "lungs overlap at voxel {idx:?}"
            )));
        }
        if (in_right || in_left || in_medi) && !spec.body_contains(idx) {
            return Err(Error::InvalidArgument(format!(
                "organ voxel {idx:?} lies outside the body outline"
            )));
        }
        right[[a, b, cc]] = in_right;
        left[[a, b, cc]] = in_left;
        medi[[a, b, cc]] = in_medi;
        *v = if in_right || in_left {
            LUNG_INTENSITY
        } else if in_medi {
            MEDIASTINUM_INTENSITY
        } else if spec.body_contains(idx) {
            BODY_INTENSITY
        } else {
            AIR_INTENSITY
        };
    }

    let mut labels = PlantedLabels::new();
    for (index, lesion) in spec.lesions.iter().enumerate() {
        let voxels = lesion.blob.voxels(spec.dims);
        let inside = !voxels.is_empty()
            && voxels
                .iter()
                .all(|&idx| spec.region_contains(lesion.location, idx));
        if !inside {
            return Err(Error::LesionOutsideOrgan {
                index,
                abnormality: lesion.abnormality.clone(),
                location: lesion.location.to_string(),
            });
        }
        for idx in voxels {
            vox[idx] += lesion.delta;
        }
        labels.insert((lesion.abnormality.clone(), lesion.location));
    }
    if let Some(conf) = &spec.confounder {
        let voxels = conf.blob.voxels(spec.dims);
        if voxels.is_empty()
            || !voxels
                .iter()
                .all(|&idx| spec.region_contains(conf.location, idx))
        {
            return Err(Error::LesionOutsideOrgan {
                index: spec.lesions.len(),
                abnormality: "confounder".into(),
                location: conf.location.to_string(),
            });
        }
        for idx in voxels {
            vox[idx] += conf.delta;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in vox.iter_mut() {
        if spec.noise > 0.0 {
            *v += rng.random_range(-spec.noise..=spec.noise);
        }
        *v = v.clamp(0.0, 1.0);
    }

    let volume = CtVolume::new(spec.scan_id.clone(), vox, [1.0; 3])?;
    let masks = OrganMasks {
        right_lung: BinaryMask3D::new(right, Organ::RightLung),
        left_lung: BinaryMask3D::new(left, Organ::LeftLung),
        mediastinum: BinaryMask3D::new(medi, Organ::Mediastinum),
    };
    Ok(Phantom {
        volume,
        masks,
        labels,
    })
}
