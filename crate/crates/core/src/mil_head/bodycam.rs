use ndarray::{Array1, Array2, Axis};

use super::VolumeScores;
use crate::error::{Error, Result};
use crate::volgrid::FeatureMapStack;

/// Global-average-pooling head: one weight per feature channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyCamParams {
    /// `[M, F]`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// `s_m = w'_m . GAP_{h,d1,d2}(Z) + b_m`.
pub fn bodycam_forward(z: &FeatureMapStack, p: &BodyCamParams) -> Result<VolumeScores> {
    let dims = z.dims();
    if p.w.ncols() != dims.f || p.w.nrows() != p.b.len() {
        return Err(Error::DimensionMismatch(format!(
            "head [{}, {}] with {} biases does not fit {} feature channels",
            p.w.nrows(),
            p.w.ncols(),
            p.b.len(),
            dims.f
        )));
    }
    let pooled: Array1<f64> = Array1::from_shape_fn(dims.f, |f| {
        z.values().index_axis(Axis(1), f).mean().unwrap_or(0.0)
    });
    Ok(VolumeScores::from_logits(p.w.dot(&pooled) + &p.b))
}
