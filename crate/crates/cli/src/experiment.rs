//! Training, evaluation and the with/without mask-loss comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use axialnet::evalx::{
    auroc_csv, auroc_table, organ_iou, organ_iou_csv, slice_summary_csv, summarize_slice_scores,
    AurocResult, IouScan, OrganIouResult,
};
use axialnet::explain::{attention_map, CamMethod};
use axialnet::mil_head::{
    aggregate, load_checkpoint, per_slice_scores, save_checkpoint, train, Checkpoint, EpochStats,
    Example, HeadParams, SliceScores, TrainConfig,
};
use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::layout::{ensure_dir, write_json, write_text, Layout};
use crate::pipeline::{Dataset, ScanData};

const STREAM_INIT: u64 = 100;
const STREAM_SHUFFLE: u64 = 101;

pub const METHODS: [CamMethod; 2] = [CamMethod::GradCam, CamMethod::HiResCam];

/// File-safe model name for a mask weight, e.g. `lambda_0.3333`.
pub fn model_name(mask_weight: f64) -> String {
    format!("lambda_{mask_weight:.4}")
}

pub fn checkpoint_path(layout: &Layout, mask_weight: f64) -> PathBuf {
    layout
        .models()
        .join(format!("{}.ckpt.json", model_name(mask_weight)))
}

/// Training configuration of the model with `mask_weight`; all models of an
/// experiment share the shuffle seed.
pub fn train_config(cfg: &ExperimentConfig, mask_weight: f64) -> TrainConfig {
    TrainConfig {
        mask_weight,
        seed: derive_seed(cfg.seed, STREAM_SHUFFLE),
        ..cfg.train.clone()
    }
}

pub fn initial_params(cfg: &ExperimentConfig, data: &Dataset) -> Result<HeadParams> {
    let dims = data
        .train
        .first()
        .ok_or_else(|| CliError::Data("training split is empty".into()))?
        .z
        .dims();
    Ok(HeadParams::init(
        data.head_labels.len(),
        dims,
        derive_seed(cfg.seed, STREAM_INIT),
    ))
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub mask_weight: f64,
    pub checkpoint: PathBuf,
    /// Parameters as stored, i.e. rounded to `f32`.
    pub params: HeadParams,
    pub history: Vec<EpochStats>,
}

/// Trains one head from the shared initialization and saves its checkpoint.
pub fn train_model(
    cfg: &ExperimentConfig,
    layout: &Layout,
    data: &Dataset,
    mask_weight: f64,
) -> Result<TrainedModel> {
    let examples: Vec<Example> = data.train.iter().map(ScanData::example).collect();
    let tcfg = train_config(cfg, mask_weight);
    let outcome = train(&examples, &tcfg, initial_params(cfg, data)?)?;
    ensure_dir(&layout.models())?;
    let stem = layout.models().join(model_name(mask_weight));
    let written = save_checkpoint(
        &Checkpoint {
            params: outcome.params,
            velocity: outcome.velocity,
            labels: data.head_labels.clone(),
            seed: tcfg.seed,
            steps: outcome.steps,
        },
        &stem,
    )?;
    let mut history = String::from("epoch,class_loss,mask_loss,total_loss\n");
    for e in &outcome.history {
        writeln!(
            history,
            "{},{},{},{}",
            e.epoch, e.class_loss, e.mask_loss, e.total_loss
        )
        .expect("string write");
    }
    write_text(
        &layout
            .results()
            .join(model_name(mask_weight))
            .join("history.csv"),
        &history,
    )?;
    let params = load_checkpoint(&written)?.params;
    Ok(TrainedModel {
        mask_weight,
        checkpoint: written,
        params,
        history: outcome.history,
    })
}

/// Squashed attention of every scan.
fn squashed_maps(
    scans: &[ScanData],
    p: &HeadParams,
    method: CamMethod,
    cfg: &ExperimentConfig,
) -> Result<Vec<Array4<f64>>> {
    scans
        .par_iter()
        .map(|s| Ok(attention_map(&s.z, p, method, cfg.train.aggregation)?.squashed()))
        .collect()
}

fn iou_views<'a>(
    maps: &'a [Array4<f64>],
    scans: &'a [ScanData],
    ys: &'a [Vec<bool>],
) -> Vec<IouScan<'a>> {
    maps.iter()
        .zip(scans)
        .zip(ys)
        .map(|((a, s), y)| IouScan {
            attention: a.view(),
            allowed: s.gt.g.view(),
            present: y,
        })
        .collect()
}

fn iou_for(
    cfg: &ExperimentConfig,
    p: &HeadParams,
    data: &Dataset,
    method: CamMethod,
) -> Result<OrganIouResult> {
    let val_maps = squashed_maps(&data.val, p, method, cfg)?;
    let test_maps = squashed_maps(&data.test, p, method, cfg)?;
    let present = |scans: &[ScanData]| -> Vec<Vec<bool>> {
        scans
            .iter()
            .map(|s| (0..s.y.len()).map(|m| s.y.is_present(m)).collect())
            .collect()
    };
    let (val_y, test_y) = (present(&data.val), present(&data.test));
    let val = iou_views(&val_maps, &data.val, &val_y);
    let test = iou_views(&test_maps, &data.test, &test_y);
    Ok(organ_iou(
        &val,
        &test,
        &cfg.eval.thresholds,
        cfg.eval.iou_mode,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model: String,
    pub mask_weight: f64,
    pub gradcam: OrganIouResult,
    pub hirescam: OrganIouResult,
    pub auroc: AurocResult,
}

/// OrganIoU for both explanation methods, test AUROC and per-slice score
/// summaries, written under `results/<model>/`.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    layout: &Layout,
    data: &Dataset,
    p: &HeadParams,
    mask_weight: f64,
) -> Result<ModelEval> {
    if p.m() != data.head_labels.len() {
        return Err(CliError::Data(format!(
            "checkpoint has {} labels, configuration has {}",
            p.m(),
            data.head_labels.len()
        )));
    }
    let dir = layout.results().join(model_name(mask_weight));
    let gradcam = iou_for(cfg, p, data, CamMethod::GradCam)?;
    let hirescam = iou_for(cfg, p, data, CamMethod::HiResCam)?;
    write_text(
        &dir.join("organ_iou_gradcam.csv"),
        &organ_iou_csv(&gradcam, &data.head_labels),
    )?;
    write_text(
        &dir.join("organ_iou_hirescam.csv"),
        &organ_iou_csv(&hirescam, &data.head_labels),
    )?;

    let slice_scores: Vec<SliceScores> = data
        .test
        .par_iter()
        .map(|s| Ok(per_slice_scores(&s.z, p)?))
        .collect::<Result<_>>()?;
    let m = data.head_labels.len();
    let volume: Vec<_> = slice_scores
        .iter()
        .map(|c| aggregate(c, cfg.train.aggregation).s)
        .collect();
    let scores = Array2::from_shape_fn((data.test.len(), m), |(i, k)| volume[i][k]);
    let labels = Array2::from_shape_fn((data.test.len(), m), |(i, k)| data.test[i].y.is_present(k));
    let auroc = auroc_table(scores.view(), labels.view())?;
    write_text(
        &dir.join("auroc.csv"),
        &auroc_csv(&auroc, &data.head_labels),
    )?;

    let present: Vec<Vec<bool>> = data
        .test
        .iter()
        .map(|s| (0..m).map(|k| s.y.is_present(k)).collect())
        .collect();
    let c: Vec<Array2<f64>> = slice_scores.into_iter().map(|c| c.c).collect();
    let summary = summarize_slice_scores(&c, &present)?;
    write_text(
        &dir.join("slice_scores.csv"),
        &slice_summary_csv(&summary, &data.head_labels),
    )?;

    let eval = ModelEval {
        model: model_name(mask_weight),
        mask_weight,
        gradcam,
        hirescam,
        auroc,
    };
    write_json(&dir.join("eval.json"), &eval)?;
    Ok(eval)
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    Ok(load_checkpoint(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub models: Vec<ModelEval>,
    /// Class loss of each model before its first update.
    pub initial_class_loss: Vec<f64>,
}

impl ExperimentReport {
    /// Rows are models, columns Grad-CAM and HiResCAM mean OrganIoU, then
    /// median AUROC.
    pub fn table_csv(&self) -> String {
        let mut s =
            String::from("model,mask_weight,gradcam_organ_iou,hirescam_organ_iou,median_auroc\n");
        for m in &self.models {
            let auroc = m.auroc.median.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{}",
                m.model, m.mask_weight, m.gradcam.mean, m.hirescam.mean, auroc
            )
            .expect("string write");
        }
        s
    }

    pub fn table_markdown(&self) -> String {
        let mut s = String::from(
            "| mask weight | Grad-CAM OrganIoU | HiResCAM OrganIoU | median AUROC |\n",
        );
        s.push_str("|---|---|---|---|\n");
        for m in &self.models {
            let auroc = m
                .auroc
                .median
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "n/a".into());
            writeln!(
                s,
                "| {:.4} | {:.3} | {:.3} | {auroc} |",
                m.mask_weight, m.gradcam.mean, m.hirescam.mean
            )
            .expect("string write");
        }
        s
    }

    /// HiResCAM mean OrganIoU of the model with `mask_weight`.
    pub fn hirescam_iou(&self, mask_weight: f64) -> Option<f64> {
        self.models
            .iter()
            .find(|m| m.mask_weight == mask_weight)
            .map(|m| m.hirescam.mean)
    }
}

/// Trains and evaluates one model per configured mask weight.
pub fn compare_models(
    cfg: &ExperimentConfig,
    layout: &Layout,
    data: &Dataset,
) -> Result<ExperimentReport> {
    let mut models = Vec::new();
    let mut initial = Vec::new();
    for &w in &cfg.mask_weights {
        let trained = train_model(cfg, layout, data, w)?;
        initial.push(trained.history[0].class_loss);
        models.push(evaluate_model(cfg, layout, data, &trained.params, w)?);
    }
    let report = ExperimentReport {
        seed: cfg.seed,
        models,
        initial_class_loss: initial,
    };
    write_text(&layout.results().join("table.csv"), &report.table_csv())?;
    write_text(&layout.results().join("table.md"), &report.table_markdown())?;
    write_json(&layout.results().join("summary.json"), &report)?;
    Ok(report)
}
