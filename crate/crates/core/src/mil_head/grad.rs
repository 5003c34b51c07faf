//! Hand-derived gradients of the total loss with respect to `(W, b)`.
//!
//! Classification part: `dL/ds_m = (yhat_m - y_m) / M`; with mean pooling
//! `ds_m/dw_m = mean_h flat(z_h)`, with max pooling the arg-max slice alone.
//! Mask part: a forbidden element with raw attention `r` contributes
//! `lambda * dpen/dr * dr/dw`, where `dr/dw[m, (f, d1, d2)] = z[h, f, d1, d2] / H`
//! for mean pooling (`z` itself on the arg-max slice for max pooling).

use ndarray::{Array1, Array2};

use super::{
    aggregate, per_slice_scores, Aggregation, HeadParams, LabelVector, MaskLossKind, Objective,
};
use crate::error::{Error, Result};
use crate::explain::{self, sigmoid, CamMethod};
use crate::gt_builder::AttentionGroundTruth;
use crate::volgrid::FeatureMapStack;

/// Same-shaped companions of `(W, b)`: gradients or momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &HeadParams) -> Self {
        Gradients {
            w: Array2::zeros(p.w().raw_dim()),
            b: Array1::zeros(p.m()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.w += &other.w;
        self.b += &other.b;
    }

    pub fn scale(&mut self, k: f64) {
        self.w *= k;
        self.b *= k;
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

fn penalty_derivative(kind: MaskLossKind, raw: f64) -> f64 {
    let a = sigmoid(raw);
    match kind {
        MaskLossKind::LogComplement => a,
        MaskLossKind::Squared => 2.0 * a * a * (1.0 - a),
    }
}

impl Objective {
    pub fn gradients(
        &self,
        z: &FeatureMapStack,
        p: &HeadParams,
        y: &LabelVector,
        g: &AttentionGroundTruth,
    ) -> Result<Gradients> {
        p.check_features(z)?;
        if y.len() != p.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {}-row head",
                y.len(),
                p.m()
            )));
        }
        let dims = z.dims();
        let len = dims.slice_len();
        let slices = per_slice_scores(z, p)?;
        let scores = aggregate(&slices, self.aggregation);
        let inv_m = 1.0 / p.m() as f64;
        let inv_h = 1.0 / dims.h as f64;
        let mut grads = Gradients::zeros_like(p);

        let mut zbar = vec![0.0; len];
        if self.aggregation == Aggregation::Mean {
            for h in 0..dims.h {
                for (acc, &v) in zbar.iter_mut().zip(z.slice_flat(h)) {
                    *acc += v;
                }
            }
            zbar.iter_mut().for_each(|v| *v *= inv_h);
        }

        for m in 0..p.m() {
            let dlds = (scores.yhat[m] - f64::from(y.as_slice()[m])) * inv_m;
            grads.b[m] = dlds;
            let feats: &[f64] = match self.aggregation {
                Aggregation::Mean => &zbar,
                Aggregation::Max => z.slice_flat(slices.argmax(m)),
            };
            for (gw, &v) in grads.w.row_mut(m).iter_mut().zip(feats) {
                *gw = dlds * v;
            }
        }

        if self.mask_weight != 0.0 {
            if g.g.shape() != [p.m(), dims.h, dims.d1, dims.d2] {
                return Err(Error::DimensionMismatch(format!(
                    "ground truth {:?} does not match attention shape",
                    g.g.shape()
                )));
            }
            let attn = explain::attention_map(z, p, CamMethod::HiResCam, self.aggregation)?;
            let zv = z.values();
            let plane = dims.d1 * dims.d2;
            for m in 0..p.m() {
                if g.excluded[m] {
                    continue;
                }
                let (slice_range, scale) = match self.aggregation {
                    Aggregation::Mean => (0..dims.h, inv_h),
                    Aggregation::Max => {
                        let top = slices.argmax(m);
                        (top..top + 1, 1.0)
                    }
                };
                let mut row = grads.w.row_mut(m);
                for h in slice_range {
                    for a in 0..dims.d1 {
                        for b in 0..dims.d2 {
                            if g.g[[m, h, a, b]] {
                                continue;
                            }
                            let coef = self.mask_weight
                                * penalty_derivative(self.mask_loss, attn.raw[[m, h, a, b]])
                                * scale;
                            for f in 0..dims.f {
                                row[f * plane + a * dims.d2 + b] += coef * zv[[h, f, a, b]];
                            }
                        }
                    }
                }
            }
        }

        if !grads.is_finite() {
            return Err(Error::NumericOverflow("non-finite gradient".into()));
        }
        Ok(grads)
    }
}

/// Gradient of `L_class + lambda * L_mask` under the given pooling.
pub fn grad_params(
    z: &FeatureMapStack,
    p: &HeadParams,
    y: &LabelVector,
    g: &AttentionGroundTruth,
    lambda: f64,
    mode: Aggregation,
) -> Result<Gradients> {
    Objective {
        mask_weight: lambda,
        aggregation: mode,
        mask_loss: MaskLossKind::LogComplement,
    }
    .gradients(z, p, y, g)
}
