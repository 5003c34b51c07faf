use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use axialnet::explain::{attention_map, top_slices, CamMethod};
use axialnet::mil_head::{
    load_checkpoint, per_slice_scores, save_checkpoint, Checkpoint, Gradients, HeadParams,
};
use axialnet::report_labeler::LabelRecord;
use axialnet::volgrid::{load_volume, toy_featurize};
use axialnet_cli::commands::{
    cmd_explain, cmd_parse_reports, cmd_run_experiment, cmd_synth, layout, read_raw_csv,
};
use axialnet_cli::synth::{read_manifest, TruthRecord};
use axialnet_cli::ExperimentConfig;

fn small(out: &Path, n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.corpus.n_scans = n;
    cfg.train.epochs = 15;
    cfg
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn count_suffix(dir: &Path, suffix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(suffix)
        })
        .count()
}

#[test]
fn synth_writes_ten_scans_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let summary = cmd_synth(&small(a.path(), 10)).unwrap();
    cmd_synth(&small(b.path(), 10)).unwrap();
    assert_eq!(summary.n_scans, 10);
    let l = layout(&small(a.path(), 10));
    assert_eq!(
        count_suffix(&l.volumes(), axialnet::volgrid::VOLUME_HEADER_SUFFIX),
        10
    );
    assert_eq!(count_suffix(&l.reports(), ".txt"), 10);
    let manifest = read_manifest(&l).unwrap();
    assert_eq!(manifest.len(), 10);
    assert!(!manifest.train.is_empty() && !manifest.val.is_empty() && !manifest.test.is_empty());
    assert_eq!(files_under(a.path()), files_under(b.path()));
}

#[test]
fn reports_parse_back_to_planted_findings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 40);
    cmd_synth(&cfg).unwrap();
    let records = cmd_parse_reports(&cfg).unwrap();
    let truth: Vec<TruthRecord> =
        serde_json::from_str(&fs::read_to_string(layout(&cfg).truth_labels()).unwrap()).unwrap();
    let truth: BTreeMap<_, _> = truth.into_iter().map(|t| (t.scan_id.clone(), t)).collect();
    let mut right_nodules = 0;
    for LabelRecord { scan_id, pairs, .. } in &records {
        let want = &truth[scan_id].pairs;
        assert_eq!(pairs, want, "{scan_id}");
        right_nodules += pairs
            .iter()
            .filter(|p| p.abnormality == "nodule" && p.location == axialnet::Location::RightLung)
            .count();
    }
    assert!(right_nodules > 0);
}

#[test]
fn experiment_table_shared_start_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 60);
    let first = cmd_run_experiment(&cfg).unwrap();
    assert_eq!(first.models.len(), 2);
    assert_eq!(first.initial_class_loss[0], first.initial_class_loss[1]);

    let table = fs::read_to_string(layout(&cfg).results().join("table.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let iou_cells: Vec<f64> = rows
        .iter()
        .flat_map(|r| [r[2].parse().unwrap(), r[3].parse().unwrap()])
        .collect();
    assert_eq!(iou_cells.len(), 4);
    assert!(iou_cells.iter().all(|v| (0.0..=1.0).contains(v)));

    let summary = fs::read(layout(&cfg).results().join("summary.json")).unwrap();
    fs::remove_dir_all(layout(&cfg).cache()).unwrap();
    let second = cmd_run_experiment(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        summary,
        fs::read(layout(&cfg).results().join("summary.json")).unwrap()
    );
}

fn explain_fixture(
    params: impl FnOnce(usize, axialnet::volgrid::FeatureDims) -> HeadParams,
) -> (
    tempfile::TempDir,
    ExperimentConfig,
    String,
    PathBuf,
    HeadParams,
) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 10);
    cmd_synth(&cfg).unwrap();
    let l = layout(&cfg);
    let scan = read_manifest(&l).unwrap().test[0].clone();
    let vol = load_volume(&l.volume_header(&scan)).unwrap();
    let z = toy_featurize(&vol, cfg.features.slice_group, cfg.features.pool).unwrap();
    let p = params(cfg.head_labels().len(), z.dims());
    let path = save_checkpoint(
        &Checkpoint {
            params: p.clone(),
            velocity: Gradients::zeros_like(&p),
            labels: cfg.head_labels(),
            seed: 0,
            steps: 0,
        },
        &dir.path().join("head"),
    )
    .unwrap();
    (dir, cfg, scan, path, p)
}

#[test]
fn zero_weights_explain_to_blank_maps() {
    let (_dir, cfg, scan, ckpt, _) = explain_fixture(HeadParams::zeros);
    let out = cmd_explain(&cfg, &scan, "lung nodule", &ckpt, CamMethod::HiResCam, 2).unwrap();
    assert_eq!(out.slice_images.len(), cfg.attention_dims()[0]);
    for image in &out.slice_images {
        let bytes = fs::read(image).unwrap();
        let header_end = bytes
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .nth(2)
            .unwrap()
            .0
            + 1;
        assert!(bytes[header_end..].iter().all(|&b| b == 0));
    }
    let raw = read_raw_csv(&out.dir.join("raw.csv")).unwrap();
    assert!(raw.iter().all(|r| r.3 == 0.0));
}

#[test]
fn explain_exports_match_memory() {
    let (_dir, cfg, scan, ckpt, _) = explain_fixture(|m, dims| HeadParams::init(m, dims, 5));
    // Stored parameters are rounded to f32; explain uses what was stored.
    let p = load_checkpoint(&ckpt).unwrap().params;
    let k = 3;
    let out = cmd_explain(&cfg, &scan, "cardiomegaly", &ckpt, CamMethod::HiResCam, k).unwrap();

    let l = layout(&cfg);
    let z = toy_featurize(
        &load_volume(&l.volume_header(&scan)).unwrap(),
        cfg.features.slice_group,
        cfg.features.pool,
    )
    .unwrap();
    let m = cfg
        .head_labels()
        .iter()
        .position(|n| n == "cardiomegaly")
        .unwrap();
    let map = attention_map(&z, &p, CamMethod::HiResCam, cfg.train.aggregation).unwrap();
    let raw = read_raw_csv(&out.dir.join("raw.csv")).unwrap();
    assert_eq!(raw.len(), map.row(m).len());
    for (h, r, c, v) in raw {
        assert_eq!(v, map.raw[[m, h, r, c]]);
    }
    let expected = top_slices(&per_slice_scores(&z, &p).unwrap(), m, k).unwrap();
    assert_eq!(out.top_slices, expected);
    let listing = fs::read_to_string(out.dir.join("top_slices.csv")).unwrap();
    let listed: Vec<usize> = listing
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(listed, expected);
}

#[test]
fn explain_rejects_unknown_inputs() {
    let (_dir, cfg, scan, ckpt, _) = explain_fixture(HeadParams::zeros);
    assert!(cmd_explain(
        &cfg,
        "no-such-scan",
        "lung nodule",
        &ckpt,
        CamMethod::GradCam,
        1
    )
    .is_err());
    assert!(cmd_explain(&cfg, &scan, "no-such-finding", &ckpt, CamMethod::GradCam, 1).is_err());
}

fn axialnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_axialnet"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(axialnet(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(axialnet(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        axialnet(&["parse-reports", "--out", out]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        axialnet(&["synth", "--config", bad.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(1)
    );

    let mut cfg = small(dir.path(), 10);
    cfg.train.learning_rate = 1e300;
    cfg.train.epochs = 5;
    let path = dir.path().join("explode.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let cfg_arg = path.to_str().unwrap();
    for stage in ["synth", "parse-reports", "segment"] {
        assert!(
            axialnet(&[stage, "--config", cfg_arg]).status.success(),
            "{stage}"
        );
    }
    let train = axialnet(&["train", "--config", cfg_arg]);
    assert_eq!(
        train.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    assert!(axialnet(&["init-config", path.to_str().unwrap()])
        .status
        .success());
    assert_eq!(
        ExperimentConfig::load(&path).unwrap(),
        ExperimentConfig::default()
    );
}
