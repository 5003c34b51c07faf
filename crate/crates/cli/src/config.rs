//! Experiment configuration, stored as JSON. Every field has a default, so a
//! partial file is valid and `init-config` writes the full default.

use std::path::{Path, PathBuf};

use axialnet::evalx::IouMode;
use axialnet::gt_builder::DownsampleConfig;
use axialnet::mil_head::{AbsentMode, TrainConfig};
use axialnet::organ_seg::SegParams;
use axialnet::Location;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A planted finding: which head label it produces and how it looks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindingSpec {
    /// Vocabulary label name, e.g. `"lung nodule"`.
    pub label: String,
    /// Concept id written into the truth labels, e.g. `"nodule"`.
    pub abnormality: String,
    /// Candidate locations; one is drawn per affected scan.
    pub locations: Vec<Location>,
    /// Report phrase the template places before the location wording.
    pub phrase: String,
    pub prevalence: f64,
    /// Blob radius in voxels.
    pub radius: f64,
    /// Intensity added inside the blob.
    pub delta: f32,
}

/// An unlabeled bump whose presence tracks one finding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSpec {
    /// Label name of the finding it is correlated with.
    pub tracks: String,
    pub location: Location,
    /// Blob center as fractions of the grid dims.
    pub center: [f64; 3],
    pub radius: f64,
    pub delta: f32,
    /// Probability of the bump when the tracked finding is present.
    pub p_present: f64,
    /// Probability of the bump when it is absent.
    pub p_absent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_scans: usize,
    pub dims: [usize; 3],
    pub noise: f32,
    /// Relative jitter of lung radii, drawn uniformly per scan.
    pub lung_jitter: f64,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub findings: Vec<FindingSpec>,
    pub confounder: Option<ConfounderSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let lungs = vec![Location::RightLung, Location::LeftLung];
        CorpusConfig {
            n_scans: 200,
            dims: [24, 32, 32],
            noise: 0.02,
            lung_jitter: 0.05,
            fractions: [0.6, 0.2, 0.2],
            findings: vec![
                FindingSpec {
                    label: "lung nodule".into(),
                    abnormality: "nodule".into(),
                    locations: lungs.clone(),
                    phrase: "there is a nodule".into(),
                    prevalence: 0.4,
                    radius: 1.5,
                    delta: 0.3,
                },
                FindingSpec {
                    label: "consolidation".into(),
                    abnormality: "consolidation".into(),
                    locations: lungs.clone(),
                    phrase: "there is consolidation".into(),
                    prevalence: 0.3,
                    radius: 2.5,
                    delta: 0.25,
                },
                FindingSpec {
                    label: "atelectasis".into(),
                    abnormality: "atelectasis".into(),
                    locations: lungs,
                    phrase: "there is atelectasis".into(),
                    prevalence: 0.3,
                    radius: 2.0,
                    delta: 0.3,
                },
                FindingSpec {
                    label: "cardiomegaly".into(),
                    abnormality: "cardiomegaly".into(),
                    locations: vec![Location::Heart],
                    phrase: "the heart is enlarged".into(),
                    prevalence: 0.3,
                    radius: 2.0,
                    delta: 0.2,
                },
            ],
            confounder: Some(ConfounderSpec {
                tracks: "lung nodule".into(),
                location: Location::Other,
                center: [0.5, 0.15, 0.5],
                radius: 3.5,
                delta: 0.4,
                p_present: 0.9,
                p_absent: 0.1,
            }),
        }
    }
}

/// Fixed feature extractor geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Slices per head slice `h`.
    pub slice_group: usize,
    /// In-plane pooling factor.
    pub pool: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            slice_group: 3,
            pool: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub iou_mode: IouMode,
    /// Slices listed by `explain`.
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: axialnet::evalx::default_threshold_grid(),
            iou_mode: IouMode::Count,
            top_k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    /// `mask_weight` and `seed` here are overridden per model and from the
    /// global seed.
    pub train: TrainConfig,
    /// Mask-loss weights of the models trained by `run-experiment`.
    pub mask_weights: Vec<f64>,
    pub segmentation: SegParams,
    pub downsample: DownsampleConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("axialnet-out"),
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            // Tuned on the default corpus; the head defaults (lr 1e-3, 30
            // epochs) barely move the dense toy features.
            train: TrainConfig {
                learning_rate: 0.02,
                epochs: 400,
                batch_size: 16,
                absent_mode: AbsentMode::Skip,
                ..TrainConfig::default()
            },
            mask_weights: vec![0.0, 1.0 / 3.0],
            segmentation: SegParams::default(),
            downsample: DownsampleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Usage(format!("invalid config: {msg}")));
        let c = &self.corpus;
        if c.n_scans < 10 {
            return bad(format!("n_scans = {} is below 10", c.n_scans));
        }
        if c.fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
            || (c.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions {:?} must lie in [0, 1] and sum to 1",
                c.fractions
            ));
        }
        if c.findings.is_empty() {
            return bad("no findings configured".into());
        }
        for f in &c.findings {
            if f.locations.is_empty() || !(0.0..=1.0).contains(&f.prevalence) {
                return bad(format!(
                    "finding {:?} needs locations and a prevalence in [0, 1]",
                    f.label
                ));
            }
        }
        if let Some(conf) = &c.confounder {
            if !c.findings.iter().any(|f| f.label == conf.tracks) {
                return bad(format!(
                    "confounder tracks unknown finding {:?}",
                    conf.tracks
                ));
            }
            if ![conf.p_present, conf.p_absent]
                .iter()
                .all(|p| (0.0..=1.0).contains(p))
            {
                return bad("confounder probabilities must lie in [0, 1]".into());
            }
        }
        let f = &self.features;
        if f.slice_group == 0 || f.pool == 0 {
            return bad("slice_group and pool must be positive".into());
        }
        if !c.dims[0].is_multiple_of(f.slice_group)
            || !c.dims[1].is_multiple_of(f.pool)
            || !c.dims[2].is_multiple_of(f.pool)
        {
            return bad(format!(
                "grid {:?} is not divisible by slice group {} and pool {}",
                c.dims, f.slice_group, f.pool
            ));
        }
        if self.mask_weights.is_empty() {
            return bad("mask_weights is empty".into());
        }
        if self.eval.thresholds.is_empty() {
            return bad("empty threshold grid".into());
        }
        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        self.segmentation
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        Ok(())
    }

    /// Attention grid `[H, D1, D2]` of the feature extractor.
    pub fn attention_dims(&self) -> [usize; 3] {
        let [s, r, c] = self.corpus.dims;
        [
            s / self.features.slice_group,
            r / self.features.pool,
            c / self.features.pool,
        ]
    }

    pub fn head_labels(&self) -> Vec<String> {
        self.corpus
            .findings
            .iter()
            .map(|f| f.label.clone())
            .collect()
    }
}

/// Independent stream seeds derived from the global seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
