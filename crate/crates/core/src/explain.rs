//! Class-activation explanations at the head input.
//!
//! For the slice-averaging head the score is
//! `s_m = (1/H) * sum_h w_m . flat(z_h) + b_m`, so the gradient of `s_m` with
//! respect to every slice of `Z` is `w_m / H`. HiResCAM multiplies that
//! gradient elementwise with `Z` and sums over features, which makes the sum
//! of the map equal to `s_m - b_m`: every positive element raised the score by
//! exactly that amount. Grad-CAM instead averages the gradient over all
//! positions before weighting, and can lose both magnitude and sign
//! information when the weights vary across positions.
//!
//! Raw maps carry no ReLU. Squashing or binarizing is up to the consumer.

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil_head::{Aggregation, BodyCamParams, HeadParams, SliceScores};
use crate::volgrid::{FeatureDims, FeatureMapStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamMethod {
    HiResCam,
    GradCam,
}

impl CamMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CamMethod::HiResCam => "hirescam",
            CamMethod::GradCam => "gradcam",
        }
    }
}

/// Raw explanation values for all abnormalities, shape `[M, H, D1, D2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub raw: Array4<f64>,
    pub method: CamMethod,
}

impl AttentionMap {
    pub fn shape(&self) -> [usize; 4] {
        let (m, h, d1, d2) = self.raw.dim();
        [m, h, d1, d2]
    }

    pub fn row(&self, m: usize) -> ArrayView3<'_, f64> {
        self.raw.index_axis(Axis(0), m)
    }

    /// Elementwise logistic squashing into `(0, 1)`.
    pub fn squashed(&self) -> Array4<f64> {
        self.raw.mapv(sigmoid)
    }
}

/// Gradient of one abnormality score with respect to `Z`, shape `[H, F, D1, D2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradient {
    pub g: Array4<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_row(p_m: usize, m: usize) -> Result<()> {
    if m >= p_m {
        return Err(Error::IndexOutOfRange { index: m, len: p_m });
    }
    Ok(())
}

fn check_shapes(z: &FeatureMapStack, grad: &ScoreGradient) -> Result<FeatureDims> {
    let dims = z.dims();
    if z.values().shape() != grad.g.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradient shape {:?} does not match feature maps {:?}",
            grad.g.shape(),
            z.values().shape()
        )));
    }
    Ok(dims)
}

/// `ds_m/dZ` for the slice-averaging head: `w_m / H` repeated over slices.
pub fn grad_score_wrt_z(p: &HeadParams, m: usize) -> Result<ScoreGradient> {
    check_row(p.m(), m)?;
    let dims = p.feature_dims();
    let row = p.w().row(m);
    let scale = 1.0 / dims.h as f64;
    let g = Array4::from_shape_fn((dims.h, dims.f, dims.d1, dims.d2), |(_, f, a, b)| {
        row[(f * dims.d1 + a) * dims.d2 + b] * scale
    });
    Ok(ScoreGradient { g })
}

/// `ds_m/dZ` for the max-pooling head: `w_m` on the arg-max slice (lowest
/// index on ties), zero elsewhere.
pub fn grad_score_wrt_z_max(
    z: &FeatureMapStack,
    p: &HeadParams,
    m: usize,
) -> Result<ScoreGradient> {
    check_row(p.m(), m)?;
    let scores = crate::mil_head::per_slice_scores(z, p)?;
    let top = scores.argmax(m);
    let dims = p.feature_dims();
    let row = p.w().row(m);
    let g = Array4::from_shape_fn((dims.h, dims.f, dims.d1, dims.d2), |(h, f, a, b)| {
        if h == top {
            row[(f * dims.d1 + a) * dims.d2 + b]
        } else {
            0.0
        }
    });
    Ok(ScoreGradient { g })
}

/// `ds_m/dZ` for the global-average-pooling head: `w'_m[f] / (H D1 D2)`
/// broadcast over every position.
pub fn bodycam_score_gradient(
    dims: FeatureDims,
    p: &BodyCamParams,
    m: usize,
) -> Result<ScoreGradient> {
    check_row(p.w.nrows(), m)?;
    if p.w.ncols() != dims.f {
        return Err(Error::DimensionMismatch(format!(
            "head has {} features, maps have {}",
            p.w.ncols(),
            dims.f
        )));
    }
    let scale = 1.0 / (dims.h * dims.d1 * dims.d2) as f64;
    let g = Array4::from_shape_fn((dims.h, dims.f, dims.d1, dims.d2), |(_, f, _, _)| {
        p.w[[m, f]] * scale
    });
    Ok(ScoreGradient { g })
}

/// HiResCAM from an explicit gradient: `sum_f grad[h,f,.,.] * Z[h,f,.,.]`.
pub fn hirescam(z: &FeatureMapStack, grad: &ScoreGradient) -> Result<Array3<f64>> {
    let dims = check_shapes(z, grad)?;
    let zv = z.values();
    Ok(Array3::from_shape_fn(
        (dims.h, dims.d1, dims.d2),
        |(h, a, b)| {
            (0..dims.f)
                .map(|f| grad.g[[h, f, a, b]] * zv[[h, f, a, b]])
                .sum()
        },
    ))
}

/// HiResCAM for the slice-averaging head without any gradient computation:
/// `(1/H) * sum_f w_m[f, d1, d2] * Z[h, f, d1, d2]`.
pub fn hirescam_closed_form(z: &FeatureMapStack, p: &HeadParams, m: usize) -> Result<Array3<f64>> {
    check_row(p.m(), m)?;
    p.check_features(z)?;
    let dims = z.dims();
    let row = p.w().row(m);
    let zv = z.values();
    let inv_h = 1.0 / dims.h as f64;
    Ok(Array3::from_shape_fn(
        (dims.h, dims.d1, dims.d2),
        |(h, a, b)| {
            let dot: f64 = (0..dims.f)
                .map(|f| row[(f * dims.d1 + a) * dims.d2 + b] * zv[[h, f, a, b]])
                .sum();
            dot * inv_h
        },
    ))
}

/// 3D Grad-CAM: feature weights are the gradient averaged over `(h, d1, d2)`.
pub fn gradcam3d(z: &FeatureMapStack, grad: &ScoreGradient) -> Result<Array3<f64>> {
    let dims = check_shapes(z, grad)?;
    let alpha: Vec<f64> = (0..dims.f)
        .map(|f| grad.g.index_axis(Axis(1), f).mean().unwrap_or(0.0))
        .collect();
    let zv = z.values();
    Ok(Array3::from_shape_fn(
        (dims.h, dims.d1, dims.d2),
        |(h, a, b)| (0..dims.f).map(|f| alpha[f] * zv[[h, f, a, b]]).sum(),
    ))
}

/// Explanations for every abnormality of an AxialNet-style head.
pub fn attention_map(
    z: &FeatureMapStack,
    p: &HeadParams,
    method: CamMethod,
    aggregation: Aggregation,
) -> Result<AttentionMap> {
    p.check_features(z)?;
    let dims = z.dims();
    let mut raw = Array4::zeros((p.m(), dims.h, dims.d1, dims.d2));
    for m in 0..p.m() {
        let map = match (method, aggregation) {
            (CamMethod::HiResCam, Aggregation::Mean) => hirescam_closed_form(z, p, m)?,
            (CamMethod::HiResCam, Aggregation::Max) => {
                hirescam(z, &grad_score_wrt_z_max(z, p, m)?)?
            }
            (CamMethod::GradCam, Aggregation::Mean) => gradcam3d(z, &grad_score_wrt_z(p, m)?)?,
            (CamMethod::GradCam, Aggregation::Max) => {
                gradcam3d(z, &grad_score_wrt_z_max(z, p, m)?)?
            }
        };
        raw.index_axis_mut(Axis(0), m).assign(&map);
    }
    Ok(AttentionMap { raw, method })
}

/// Indices of the `k` highest-scoring slices for abnormality `m`, best first,
/// ties broken towards the lower index.
pub fn top_slices(c: &SliceScores, m: usize, k: usize) -> Result<Vec<usize>> {
    let (rows, h) = c.c.dim();
    check_row(rows, m)?;
    if k > h {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {h} slices"
        )));
    }
    let row = c.c.row(m);
    let mut idx: Vec<usize> = (0..h).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Min-max normalization to `[0, 1]` for display. Constant maps become zeros.
pub fn normalize_for_display(map: &ArrayView3<'_, f64>) -> Array3<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 && span.is_finite() {
        map.mapv(|v| (v - lo) / span)
    } else {
        Array3::zeros(map.raw_dim())
    }
}
