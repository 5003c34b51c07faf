//! Multiple-instance classification head over slice representations.
//!
//! Every slice group `z_h` is scored by one fully connected layer shared
//! across slices, `C[m, h] = w_m . flat(z_h) + b_m`, and the slice scores are
//! pooled into a whole-volume score `s_m` (mean by default, max as an
//! ablation). Flattening is `[f, d1, d2]` row-major everywhere.

mod bodycam;
mod checkpoint;
mod grad;
mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{self, sigmoid, AttentionMap, CamMethod};
use crate::gt_builder::AttentionGroundTruth;
use crate::volgrid::{FeatureDims, FeatureMapStack};

pub use bodycam::{bodycam_forward, BodyCamParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use grad::{grad_params, Gradients};
pub use train::{sgd_step, train, EpochStats, Example, TrainOutcome};

/// Fully connected weights shared across slices.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    w: Array2<f64>,
    b: Array1<f64>,
    dims: FeatureDims,
}

impl HeadParams {
    pub fn new(w: Array2<f64>, b: Array1<f64>, dims: FeatureDims) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows but {} biases",
                w.nrows(),
                b.len()
            )));
        }
        if w.ncols() != dims.slice_len() {
            return Err(Error::DimensionMismatch(format!(
                "weight rows have {} entries, slices flatten to {}",
                w.ncols(),
                dims.slice_len()
            )));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite head parameter".into()));
        }
        Ok(HeadParams { w, b, dims })
    }

    pub fn zeros(m: usize, dims: FeatureDims) -> Self {
        HeadParams {
            w: Array2::zeros((m, dims.slice_len())),
            b: Array1::zeros(m),
            dims,
        }
    }

    /// Weights uniform in `(-0.01, 0.01)` from `seed`, biases zero.
    pub fn init(m: usize, dims: FeatureDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w =
            Array2::from_shape_simple_fn((m, dims.slice_len()), || rng.random_range(-0.01..0.01));
        HeadParams {
            w,
            b: Array1::zeros(m),
            dims,
        }
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.w, &mut self.b)
    }

    /// Number of abnormality labels.
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn feature_dims(&self) -> FeatureDims {
        self.dims
    }

    pub(crate) fn check_features(&self, z: &FeatureMapStack) -> Result<()> {
        if z.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "feature maps {:?} do not match head dims {:?}",
                z.dims(),
                self.dims
            )));
        }
        Ok(())
    }
}

/// Per-slice abnormality scores, shape `[M, H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceScores {
    pub c: Array2<f64>,
}

impl SliceScores {
    /// Highest-scoring slice for row `m`, lowest index on ties.
    pub fn argmax(&self, m: usize) -> usize {
        let row = self.c.row(m);
        let mut best = 0;
        for (h, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = h;
            }
        }
        best
    }
}

/// Whole-volume logits and probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeScores {
    pub s: Array1<f64>,
    pub yhat: Array1<f64>,
}

impl VolumeScores {
    pub fn from_logits(s: Array1<f64>) -> Self {
        let yhat = s.mapv(sigmoid);
        VolumeScores { s, yhat }
    }
}

/// Binary presence vector over the head's labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(y: Vec<u8>) -> Result<Self> {
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "label value {bad} is not 0 or 1"
            )));
        }
        Ok(LabelVector(y))
    }

    pub fn from_bools(y: impl IntoIterator<Item = bool>) -> Self {
        LabelVector(y.into_iter().map(u8::from).collect())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_present(&self, m: usize) -> bool {
        self.0[m] == 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// How ground-truth rows of abnormalities absent from a scan are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentMode {
    /// The whole row is forbidden.
    #[default]
    AllForbidden,
    /// The row is excluded from the mask loss.
    Skip,
}

/// Per-element penalty on squashed attention `a = sigmoid(raw)` in
/// forbidden regions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLossKind {
    /// `-log(1 - a)`, i.e. `softplus(raw)`.
    #[default]
    LogComplement,
    /// `a^2`.
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub mask_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub aggregation: Aggregation,
    pub absent_mode: AbsentMode,
    pub mask_loss: MaskLossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.99,
            mask_weight: 1.0 / 3.0,
            epochs: 30,
            batch_size: 8,
            aggregation: Aggregation::Mean,
            absent_mode: AbsentMode::AllForbidden,
            mask_loss: MaskLossKind::LogComplement,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_weight >= 0.0 && self.mask_weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "mask weight must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            mask_weight: self.mask_weight,
            aggregation: self.aggregation,
            mask_loss: self.mask_loss,
        }
    }
}

/// `C[m, h] = w_m . flat(z_h) + b_m`.
pub fn per_slice_scores(z: &FeatureMapStack, p: &HeadParams) -> Result<SliceScores> {
    p.check_features(z)?;
    let h = z.dims().h;
    let mut c = Array2::zeros((p.m(), h));
    for hh in 0..h {
        let zh = z.slice_flat(hh);
        for m in 0..p.m() {
            let dot: f64 = p.w.row(m).iter().zip(zh).map(|(w, x)| w * x).sum();
            c[[m, hh]] = dot + p.b[m];
        }
    }
    Ok(SliceScores { c })
}

pub fn aggregate(c: &SliceScores, mode: Aggregation) -> VolumeScores {
    let (m, h) = c.c.dim();
    let s = Array1::from_shape_fn(m, |i| {
        let row = c.c.row(i);
        match mode {
            Aggregation::Mean => row.sum() / h as f64,
            Aggregation::Max => row[c.argmax(i)],
        }
    });
    VolumeScores::from_logits(s)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross entropy over labels, evaluated from the logits as
/// `softplus(s) - y * s` so that `log 0` never occurs.
pub fn classification_loss(scores: &VolumeScores, y: &LabelVector) -> Result<f64> {
    if scores.s.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores but {} labels",
            scores.s.len(),
            y.len()
        )));
    }
    let m = y.len() as f64;
    let total: f64 = scores
        .s
        .iter()
        .zip(y.as_slice())
        .map(|(&s, &yi)| softplus(s) - f64::from(yi) * s)
        .sum();
    Ok(total / m)
}

fn check_mask_shapes(raw: &AttentionMap, g: &AttentionGroundTruth) -> Result<()> {
    if raw.raw.shape() != g.g.shape() {
        return Err(Error::DimensionMismatch(format!(
            "attention {:?} vs ground truth {:?}",
            raw.raw.shape(),
            g.g.shape()
        )));
    }
    Ok(())
}

/// Mask loss with the default penalty.
pub fn mask_loss(raw: &AttentionMap, g: &AttentionGroundTruth) -> Result<f64> {
    mask_loss_with(raw, g, MaskLossKind::LogComplement)
}

/// Sum of the per-element penalty over every forbidden element
/// (`G = 0`) of every row not excluded from the loss.
pub fn mask_loss_with(
    raw: &AttentionMap,
    g: &AttentionGroundTruth,
    kind: MaskLossKind,
) -> Result<f64> {
    check_mask_shapes(raw, g)?;
    let mut total = 0.0;
    for ((m, h, a, b), &allowed) in g.g.indexed_iter() {
        if allowed || g.excluded[m] {
            continue;
        }
        let x = raw.raw[[m, h, a, b]];
        total += match kind {
            MaskLossKind::LogComplement => softplus(x),
            MaskLossKind::Squared => sigmoid(x).powi(2),
        };
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub class: f64,
    pub mask: f64,
    pub total: f64,
}

/// `L_class + lambda * L_mask` with its configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mask_weight: f64,
    pub aggregation: Aggregation,
    pub mask_loss: MaskLossKind,
}

impl Objective {
    pub fn new(mask_weight: f64) -> Self {
        Objective {
            mask_weight,
            aggregation: Aggregation::Mean,
            mask_loss: MaskLossKind::LogComplement,
        }
    }

    pub fn loss(
        &self,
        z: &FeatureMapStack,
        p: &HeadParams,
        y: &LabelVector,
        g: &AttentionGroundTruth,
    ) -> Result<LossParts> {
        let scores = aggregate(&per_slice_scores(z, p)?, self.aggregation);
        let class = classification_loss(&scores, y)?;
        if self.mask_weight == 0.0 {
            return Ok(LossParts {
                class,
                mask: 0.0,
                total: class,
            });
        }
        let attn = explain::attention_map(z, p, CamMethod::HiResCam, self.aggregation)?;
        let mask = mask_loss_with(&attn, g, self.mask_loss)?;
        Ok(LossParts {
            class,
            mask,
            total: class + self.mask_weight * mask,
        })
    }
}

/// `L_class + lambda * L_mask` for the slice-averaging head.
pub fn total_loss(
    z: &FeatureMapStack,
    p: &HeadParams,
    y: &LabelVector,
    g: &AttentionGroundTruth,
    lambda: f64,
) -> Result<f64> {
    Ok(Objective::new(lambda).loss(z, p, y, g)?.total)
}
