//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use axialnet::explain::{attention_map, normalize_for_display, top_slices, CamMethod};
use axialnet::mil_head::per_slice_scores;
use axialnet::report_labeler::{LabelRecord, Vocabulary};
use axialnet::volgrid::{load_volume, toy_featurize};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{
    compare_models, evaluate_model, load_model, train_model, ExperimentReport, ModelEval,
    TrainedModel,
};
use crate::layout::{ensure_dir, write_text, Layout};
use crate::pipeline::{load_dataset, parse_reports, run_segmentation, QcLine};
use crate::synth::{read_manifest, write_corpus, SynthSummary};

pub fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.out_dir)
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthSummary> {
    write_corpus(&layout(cfg), &cfg.corpus, cfg.seed)
}

pub fn cmd_parse_reports(cfg: &ExperimentConfig) -> Result<Vec<LabelRecord>> {
    parse_reports(&layout(cfg), &Vocabulary::builtin())
}

pub fn cmd_segment(cfg: &ExperimentConfig) -> Result<Vec<QcLine>> {
    run_segmentation(&layout(cfg), &cfg.segmentation)
}

/// Builds (or finds cached) ground truth for every scan; returns the count.
pub fn cmd_build_gt(cfg: &ExperimentConfig) -> Result<usize> {
    let data = load_dataset(cfg, &layout(cfg), &Vocabulary::builtin())?;
    Ok(data.train.len() + data.val.len() + data.test.len())
}

/// Trains one model per mask weight (`None` means every configured weight).
pub fn cmd_train(cfg: &ExperimentConfig, mask_weight: Option<f64>) -> Result<Vec<TrainedModel>> {
    let layout = layout(cfg);
    let data = load_dataset(cfg, &layout, &Vocabulary::builtin())?;
    let weights = mask_weight
        .map(|w| vec![w])
        .unwrap_or_else(|| cfg.mask_weights.clone());
    weights
        .into_iter()
        .map(|w| train_model(cfg, &layout, &data, w))
        .collect()
}

/// Evaluates stored checkpoints.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<Vec<ModelEval>> {
    let layout = layout(cfg);
    let data = load_dataset(cfg, &layout, &Vocabulary::builtin())?;
    let paths: Vec<(f64, PathBuf)> = if checkpoints.is_empty() {
        cfg.mask_weights
            .iter()
            .map(|&w| (w, crate::experiment::checkpoint_path(&layout, w)))
            .collect()
    } else {
        checkpoints
            .iter()
            .map(|p| (mask_weight_from_path(p).unwrap_or(f64::NAN), p.clone()))
            .collect()
    };
    paths
        .into_iter()
        .map(|(w, path)| {
            let ckpt = load_model(&path)?;
            evaluate_model(cfg, &layout, &data, &ckpt.params, w)
        })
        .collect()
}

/// Recovers the mask weight from a `lambda_<w>.ckpt.json` file name.
fn mask_weight_from_path(path: &Path) -> Option<f64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("lambda_")?
        .strip_suffix(".ckpt.json")?
        .parse()
        .ok()
}

/// Synthesizes the corpus if needed, then runs every stage and compares the
/// configured mask weights.
pub fn cmd_run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let layout = layout(cfg);
    if !layout.manifest().exists() {
        cmd_synth(cfg)?;
    }
    cmd_parse_reports(cfg)?;
    cmd_segment(cfg)?;
    let data = load_dataset(cfg, &layout, &Vocabulary::builtin())?;
    compare_models(cfg, &layout, &data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutput {
    pub dir: PathBuf,
    pub top_slices: Vec<usize>,
    pub slice_images: Vec<PathBuf>,
}

/// Binary greymap of a `[rows, cols]` map with values in `[0, 1]`.
pub fn pgm(map: ArrayView2<'_, f64>) -> Vec<u8> {
    let (rows, cols) = map.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(
        map.iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Heat maps, raw values and the top slices of one abnormality of one scan.
pub fn cmd_explain(
    cfg: &ExperimentConfig,
    scan_id: &str,
    abnormality: &str,
    checkpoint: &Path,
    method: CamMethod,
    top_k: usize,
) -> Result<ExplainOutput> {
    let layout = layout(cfg);
    let manifest = read_manifest(&layout)?;
    if !manifest.all().any(|id| id == scan_id) {
        return Err(CliError::Data(format!("unknown scan {scan_id:?}")));
    }
    let ckpt = load_model(checkpoint)?;
    let m = ckpt
        .labels
        .iter()
        .position(|l| l == abnormality)
        .ok_or_else(|| {
            CliError::Data(format!(
                "unknown abnormality {abnormality:?}; checkpoint has {:?}",
                ckpt.labels
            ))
        })?;
    let vol = load_volume(&layout.volume_header(scan_id))?;
    let z = toy_featurize(&vol, cfg.features.slice_group, cfg.features.pool)?;
    let map = attention_map(&z, &ckpt.params, method, cfg.train.aggregation)?;
    let scores = per_slice_scores(&z, &ckpt.params)?;
    let top = top_slices(&scores, m, top_k.min(z.dims().h))?;

    let dir =
        layout
            .explain()
            .join(scan_id)
            .join(format!("{}_{}", slug(abnormality), method.as_str()));
    ensure_dir(&dir)?;
    let row = map.row(m);
    let display = normalize_for_display(&row);
    let mut images = Vec::new();
    for h in 0..display.dim().0 {
        let path = dir.join(format!("slice_{h:03}.pgm"));
        std::fs::write(&path, pgm(display.index_axis(ndarray::Axis(0), h)))
            .map_err(|e| CliError::io(&path, e))?;
        images.push(path);
    }
    let mut csv = String::from("slice,row,col,value\n");
    for ((h, r, c), v) in row.indexed_iter() {
        writeln!(csv, "{h},{r},{c},{v}").expect("string write");
    }
    write_text(&dir.join("raw.csv"), &csv)?;
    let mut listing = String::from("rank,slice,score\n");
    for (rank, &h) in top.iter().enumerate() {
        writeln!(listing, "{},{h},{}", rank + 1, scores.c[[m, h]]).expect("string write");
    }
    write_text(&dir.join("top_slices.csv"), &listing)?;
    Ok(ExplainOutput {
        dir,
        top_slices: top,
        slice_images: images,
    })
}

/// Reads the CSV written by [`cmd_explain`] back into `(slice, row, col, value)`.
pub fn read_raw_csv(path: &Path) -> Result<Vec<(usize, usize, usize, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || CliError::Data(format!("{}: malformed line {line:?}", path.display()));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}
