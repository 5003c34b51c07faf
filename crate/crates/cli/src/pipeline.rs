//! Per-scan stages: report labeling, organ segmentation, features and
//! allowed-region ground truth.

use std::collections::BTreeMap;
use std::fs;

use axialnet::gt_builder::{build_gtruth, config_hash, AttentionGroundTruth, GtCache};
use axialnet::mil_head::{Example, LabelVector};
use axialnet::organ_seg::{segment_organs, QcReport, SegParams};
use axialnet::report_labeler::{LabelRecord, Vocabulary};
use axialnet::volgrid::{
    load_mask, load_volume, save_mask, toy_featurize, FeatureMapStack, OrganMasks,
};
use axialnet::Organ;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::layout::{ensure_dir, read_json, write_json, write_text, Layout};
use crate::synth::{read_manifest, read_report, Manifest};

/// Labels every report of the corpus and writes them to `labels.json`.
pub fn parse_reports(layout: &Layout, vocab: &Vocabulary) -> Result<Vec<LabelRecord>> {
    let manifest = read_manifest(layout)?;
    let mut ids: Vec<&String> = manifest.all().collect();
    ids.sort();
    let records = ids
        .par_iter()
        .map(|id| {
            Ok(vocab
                .label_report(id, &read_report(layout, id)?)
                .to_record())
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&layout.labels(), &records)?;
    Ok(records)
}

/// One line of the segmentation QC log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcLine {
    pub scan_id: String,
    pub heuristic: bool,
    #[serde(flatten)]
    pub qc: QcReport,
}

const ORGANS: [Organ; 3] = [Organ::RightLung, Organ::LeftLung, Organ::Mediastinum];

fn mask_stem(layout: &Layout, scan_id: &str, organ: Organ) -> std::path::PathBuf {
    layout.segmentation().join(format!("{scan_id}-{organ}"))
}

/// Segments every volume, saving masks and a QC log.
pub fn run_segmentation(layout: &Layout, params: &SegParams) -> Result<Vec<QcLine>> {
    let manifest = read_manifest(layout)?;
    let mut ids: Vec<&String> = manifest.all().collect();
    ids.sort();
    ensure_dir(&layout.segmentation())?;
    let hash = config_hash(params);
    let lines = ids
        .par_iter()
        .map(|id| -> Result<QcLine> {
            let vol = load_volume(&layout.volume_header(id))?;
            let seg = segment_organs(&vol, params)?;
            for organ in ORGANS {
                let mask = seg.masks.get(organ).expect("three organs");
                save_mask(mask, &mask_stem(layout, id, organ), &hash)?;
            }
            Ok(QcLine {
                scan_id: id.to_string(),
                heuristic: seg.heuristic,
                qc: seg.qc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = String::new();
    for line in &lines {
        log.push_str(&serde_json::to_string(line).expect("qc line serializes"));
        log.push('\n');
    }
    write_text(&layout.qc_log(), &log)?;
    Ok(lines)
}

pub fn read_qc_log(layout: &Layout) -> Result<Vec<QcLine>> {
    let path = layout.qc_log();
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::json(&path, e)))
        .collect()
}

pub fn load_segmentation(layout: &Layout, scan_id: &str) -> axialnet::Result<OrganMasks> {
    let load = |organ| -> axialnet::Result<_> {
        let stem = mask_stem(layout, scan_id, organ);
        let path = format!(
            "{}{}",
            stem.display(),
            axialnet::volgrid::MASK_HEADER_SUFFIX
        );
        Ok(load_mask(path.as_ref())?.0)
    };
    Ok(OrganMasks {
        right_lung: load(Organ::RightLung)?,
        left_lung: load(Organ::LeftLung)?,
        mediastinum: load(Organ::Mediastinum)?,
    })
}

/// Everything the head needs for one scan.
#[derive(Clone, Debug)]
pub struct ScanData {
    pub scan_id: String,
    pub z: FeatureMapStack,
    pub y: LabelVector,
    pub gt: AttentionGroundTruth,
}

impl ScanData {
    pub fn example(&self) -> Example {
        Example {
            scan_id: self.scan_id.clone(),
            z: self.z.clone(),
            y: self.y.clone(),
            g: self.gt.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub head_labels: Vec<String>,
    pub train: Vec<ScanData>,
    pub val: Vec<ScanData>,
    pub test: Vec<ScanData>,
}

/// Vocabulary indices of the configured head labels.
pub fn head_label_ids(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Vec<usize>> {
    cfg.head_labels()
        .iter()
        .map(|name| {
            vocab.label_id(name).ok_or_else(|| {
                CliError::Usage(format!("head label {name:?} is not in the vocabulary"))
            })
        })
        .collect()
}

#[derive(Serialize)]
struct GtKey<'a> {
    seed: u64,
    corpus: &'a crate::config::CorpusConfig,
    segmentation: &'a SegParams,
    downsample: &'a axialnet::gt_builder::DownsampleConfig,
    absent: axialnet::mil_head::AbsentMode,
    target: [usize; 3],
    head_labels: Vec<String>,
}

/// Cache key of the ground truth built under `cfg`.
pub fn gt_key(cfg: &ExperimentConfig) -> String {
    config_hash(&GtKey {
        seed: cfg.seed,
        corpus: &cfg.corpus,
        segmentation: &cfg.segmentation,
        downsample: &cfg.downsample,
        absent: cfg.train.absent_mode,
        target: cfg.attention_dims(),
        head_labels: cfg.head_labels(),
    })
}

/// Loads labels and segmentations from earlier stages and assembles
/// features and ground truth for the scans of `manifest`. Ground truth
/// comes from the on-disk cache when present.
pub fn load_dataset(
    cfg: &ExperimentConfig,
    layout: &Layout,
    vocab: &Vocabulary,
) -> Result<Dataset> {
    let manifest: Manifest = read_manifest(layout)?;
    if !layout.labels().exists() {
        return Err(CliError::Data(
            "no labels found; run parse-reports first".into(),
        ));
    }
    if !layout.qc_log().exists() {
        return Err(CliError::Data(
            "no segmentation found; run segment first".into(),
        ));
    }
    let records: Vec<LabelRecord> = read_json(&layout.labels())?;
    let records: BTreeMap<String, LabelRecord> = records
        .into_iter()
        .map(|r| (r.scan_id.clone(), r))
        .collect();
    let heuristic: BTreeMap<String, bool> = read_qc_log(layout)?
        .into_iter()
        .map(|l| (l.scan_id, l.heuristic))
        .collect();
    let head = head_label_ids(cfg, vocab)?;
    let cache = GtCache::new(layout.cache().join("gt"))?;
    let key = gt_key(cfg);
    let target = cfg.attention_dims();

    let prepare = |ids: &[String]| -> Result<Vec<ScanData>> {
        ids.par_iter()
            .map(|id| {
                let record = records
                    .get(id)
                    .ok_or_else(|| CliError::Data(format!("scan {id} has no labels")))?;
                let labels = vocab.labels_from_record(record)?;
                let fallback = *heuristic
                    .get(id)
                    .ok_or_else(|| CliError::Data(format!("scan {id} has no segmentation")))?;
                let gt = cache.load_or_build(id, &key, || {
                    let masks = load_segmentation(layout, id)?;
                    build_gtruth(
                        &labels,
                        &head,
                        &masks,
                        fallback,
                        target,
                        &cfg.downsample,
                        cfg.train.absent_mode,
                    )
                })?;
                let vol = load_volume(&layout.volume_header(id))?;
                let z = toy_featurize(&vol, cfg.features.slice_group, cfg.features.pool)?;
                let y = LabelVector::from_bools(head.iter().map(|&l| labels.is_present(l)));
                Ok(ScanData {
                    scan_id: id.clone(),
                    z,
                    y,
                    gt,
                })
            })
            .collect()
    };
    Ok(Dataset {
        head_labels: cfg.head_labels(),
        train: prepare(&manifest.train)?,
        val: prepare(&manifest.val)?,
        test: prepare(&manifest.test)?,
    })
}
