//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Tolerances are pinned in the constants below.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axialnet::evalx::{auroc, iou_at, IouMode, IouScan};
use axialnet::explain::{
    attention_map, bodycam_score_gradient, grad_score_wrt_z, gradcam3d, hirescam,
    hirescam_closed_form, CamMethod,
};
use axialnet::gt_builder::{
    build_gtruth_from_locations, AttentionGroundTruth, DownsampleAlgo, DownsampleConfig,
};
use axialnet::mil_head::{
    aggregate, classification_loss, grad_params, mask_loss, per_slice_scores, AbsentMode,
    Aggregation, BodyCamParams, HeadParams, LabelVector,
};
use axialnet::organ_seg::{segment_lungs, segment_organs, split_left_right, SegParams};
use axialnet::report_labeler::{LabelPair, Vocabulary};
use axialnet::volgrid::{generate_phantom, CtVolume, FeatureDims, FeatureMapStack, PhantomSpec};
use axialnet::{Location, Organ};
use axialnet_cli::commands::cmd_run_experiment;
use axialnet_cli::ExperimentConfig;
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 120;
const FAITHFUL_TOL: f64 = 1e-9;
const FAITHFUL_BUDGET: Duration = Duration::from_secs(5);
const PATH_TOL: f64 = 1e-12;
const CAM_TOL: f64 = 1e-12;
const FD_EPS: f64 = 1e-4;
const FD_REL: f64 = 1e-5;
/// Absolute floor for components that are zero analytically.
const FD_ABS: f64 = 1e-9;
const MASK_WEIGHT: f64 = 1.0 / 3.0;
const IOU_GAIN: f64 = 0.10;
const SEEDS: u64 = 5;
const SEEDS_NEEDED: usize = 4;
const SEED_BUDGET: Duration = Duration::from_secs(300);
const DICE_MIN: f64 = 0.99;
const AUROC_RANDOM_TOL: f64 = 0.05;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Instance {
    z: FeatureMapStack,
    p: HeadParams,
    y: LabelVector,
    g: Array4<bool>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let dims = FeatureDims {
        h: rng.random_range(1..=6),
        f: rng.random_range(1..=4),
        d1: rng.random_range(1..=4),
        d2: rng.random_range(1..=4),
    };
    let z = Array4::from_shape_simple_fn((dims.h, dims.f, dims.d1, dims.d2), || {
        rng.random_range(-1.0..1.0)
    });
    let w = Array2::from_shape_simple_fn((m, dims.slice_len()), || rng.random_range(-1.0..1.0));
    let b = Array1::from_shape_simple_fn(m, || rng.random_range(-1.0..1.0));
    let y = LabelVector::from_bools((0..m).map(|_| rng.random_bool(0.5)));
    let g = Array4::from_shape_simple_fn((m, dims.h, dims.d1, dims.d2), || rng.random_bool(0.5));
    Instance {
        z: FeatureMapStack::new(z).expect("finite"),
        p: HeadParams::new(w, b, dims).expect("consistent"),
        y,
        g,
    }
}

fn ground_truth(inst: &Instance, mode: AbsentMode) -> AttentionGroundTruth {
    let [m, h, d1, d2] = {
        let s = inst.g.shape();
        [s[0], s[1], s[2], s[3]]
    };
    let mut gt = AttentionGroundTruth::all_allowed([m, h, d1, d2]);
    gt.g = inst.g.clone();
    for k in 0..m {
        if !inst.y.is_present(k) {
            match mode {
                AbsentMode::AllForbidden => gt.g.index_axis_mut(ndarray::Axis(0), k).fill(false),
                AbsentMode::Skip => gt.excluded[k] = true,
            }
        }
    }
    gt
}

fn faithfulness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let s = aggregate(
            &per_slice_scores(&inst.z, &inst.p).map_err(|e| e.to_string())?,
            Aggregation::Mean,
        )
        .s;
        for m in 0..inst.p.m() {
            let map = hirescam_closed_form(&inst.z, &inst.p, m).map_err(|e| e.to_string())?;
            worst = worst.max((map.sum() - (s[m] - inst.p.b()[m])).abs());
        }
    }
    let took = start.elapsed();
    check(
        worst <= FAITHFUL_TOL && took < FAITHFUL_BUDGET,
        format!("{INSTANCES} instances, max |sum - (s - b)| = {worst:.2e} (tol {FAITHFUL_TOL:e}), {took:.2?}"),
    )
}

fn path_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        for m in 0..inst.p.m() {
            let closed = hirescam_closed_form(&inst.z, &inst.p, m).map_err(|e| e.to_string())?;
            let grad = grad_score_wrt_z(&inst.p, m).map_err(|e| e.to_string())?;
            let via = hirescam(&inst.z, &grad).map_err(|e| e.to_string())?;
            worst = closed
                .iter()
                .zip(&via)
                .fold(worst, |w, (a, b)| w.max((a - b).abs()));
        }
    }
    check(
        worst <= PATH_TOL,
        format!("{INSTANCES} instances, max diff {worst:.2e} (tol {PATH_TOL:e})"),
    )
}

fn cam_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let dims = inst.z.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let p = BodyCamParams {
            w: Array2::from_shape_simple_fn((inst.p.m(), dims.f), || rng.random_range(-1.0..1.0)),
            b: Array1::from_shape_simple_fn(inst.p.m(), || rng.random_range(-1.0..1.0)),
        };
        for m in 0..inst.p.m() {
            let grad = bodycam_score_gradient(dims, &p, m).map_err(|e| e.to_string())?;
            let hi = hirescam(&inst.z, &grad).map_err(|e| e.to_string())?;
            let gc = gradcam3d(&inst.z, &grad).map_err(|e| e.to_string())?;
            worst = hi
                .iter()
                .zip(&gc)
                .fold(worst, |w, (a, b)| w.max((a - b).abs()));
        }
    }
    // One slice, one channel, two positions with weights of opposite sign.
    let dims = FeatureDims {
        h: 1,
        f: 1,
        d1: 1,
        d2: 2,
    };
    let z = FeatureMapStack::new(Array4::from_elem((1, 1, 1, 2), 1.0)).expect("finite");
    let p = HeadParams::new(ndarray::array![[2.0, -1.0]], ndarray::array![0.0], dims)
        .expect("consistent");
    let maps = |method| attention_map(&z, &p, method, Aggregation::Mean).map(|a| a.raw);
    let hi = maps(CamMethod::HiResCam).map_err(|e| e.to_string())?;
    let gc = maps(CamMethod::GradCam).map_err(|e| e.to_string())?;
    let flips = hi
        .iter()
        .zip(&gc)
        .filter(|(a, b)| a.signum() != b.signum())
        .count();
    check(
        worst <= CAM_TOL && flips >= 1,
        format!(
            "global-pooling head: max diff {worst:.2e} (tol {CAM_TOL:e}); slice-scoring head: {flips} sign disagreement(s), HiResCAM {:?} vs Grad-CAM {:?}",
            hi.iter().collect::<Vec<_>>(),
            gc.iter().collect::<Vec<_>>()
        ),
    )
}

fn with_param(p: &HeadParams, m: usize, col: Option<usize>, delta: f64) -> HeadParams {
    let mut w = p.w().clone();
    let mut b = p.b().clone();
    match col {
        Some(c) => w[[m, c]] += delta,
        None => b[m] += delta,
    }
    HeadParams::new(w, b, p.feature_dims()).expect("finite")
}

/// Worst `|analytic - fd| / max(|analytic|, |fd|)` over all parameters,
/// skipping components where both sides are below [`FD_ABS`].
fn fd_worst(
    inst: &Instance,
    loss: &dyn Fn(&HeadParams) -> f64,
    analytic: &(Array2<f64>, Array1<f64>),
) -> f64 {
    let mut worst: f64 = 0.0;
    let cols = inst.p.feature_dims().slice_len();
    for m in 0..inst.p.m() {
        for col in (0..cols).map(Some).chain([None]) {
            let fd = (loss(&with_param(&inst.p, m, col, FD_EPS))
                - loss(&with_param(&inst.p, m, col, -FD_EPS)))
                / (2.0 * FD_EPS);
            let an = match col {
                Some(c) => analytic.0[[m, c]],
                None => analytic.1[m],
            };
            let scale = an.abs().max(fd.abs());
            if scale > FD_ABS {
                worst = worst.max((an - fd).abs() / scale);
            }
        }
    }
    worst
}

fn gradients() -> Outcome {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..INSTANCES {
        let inst = instance(1_000 + seed);
        let class = |p: &HeadParams| {
            let s = aggregate(
                &per_slice_scores(&inst.z, p).expect("dims"),
                Aggregation::Mean,
            );
            classification_loss(&s, &inst.y).expect("dims")
        };
        let grad = |gt: &AttentionGroundTruth, lambda: f64| {
            let g = grad_params(&inst.z, &inst.p, &inst.y, gt, lambda, Aggregation::Mean)
                .expect("finite");
            (g.w, g.b)
        };
        let gt_all = ground_truth(&inst, AbsentMode::AllForbidden);
        let analytic = grad(&gt_all, 0.0);
        let e = fd_worst(&inst, &class, &analytic);
        *worst.entry("class").or_default() = worst.get("class").copied().unwrap_or(0.0).max(e);

        for (name, mode) in [
            ("mask/all_forbidden", AbsentMode::AllForbidden),
            ("mask/skip", AbsentMode::Skip),
        ] {
            let gt = ground_truth(&inst, mode);
            let mask = |p: &HeadParams| {
                let a = attention_map(&inst.z, p, CamMethod::HiResCam, Aggregation::Mean)
                    .expect("dims");
                mask_loss(&a, &gt).expect("dims")
            };
            let (w1, b1) = grad(&gt, 1.0);
            let (w0, b0) = grad(&gt, 0.0);
            let e = fd_worst(&inst, &mask, &(w1 - w0, b1 - b0));
            *worst.entry(name).or_default() = worst.get(name).copied().unwrap_or(0.0).max(e);
        }

        let total = |p: &HeadParams| {
            let a =
                attention_map(&inst.z, p, CamMethod::HiResCam, Aggregation::Mean).expect("dims");
            class(p) + MASK_WEIGHT * mask_loss(&a, &gt_all).expect("dims")
        };
        let e = fd_worst(&inst, &total, &grad(&gt_all, MASK_WEIGHT));
        *worst.entry("total").or_default() = worst.get("total").copied().unwrap_or(0.0).max(e);
    }
    let ok = worst.values().all(|&e| e <= FD_REL);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, format!("{INSTANCES} instances, eps {FD_EPS:e}, worst relative error: {detail} (tol {FD_REL:e})"))
}

fn mask_loss_comparison() -> Outcome {
    let mut lines = Vec::new();
    let mut wins = 0;
    let mut slow = false;
    for seed in 0..SEEDS {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig {
            seed,
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        if cfg.corpus.n_scans < 200 || cfg.corpus.confounder.is_none() {
            return Err("default corpus must have n >= 200 and a confounder".into());
        }
        let start = Instant::now();
        let report = cmd_run_experiment(&cfg).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        slow |= took >= SEED_BUDGET;
        let base = report.hirescam_iou(0.0).ok_or("no lambda = 0 model")?;
        let masked = report
            .hirescam_iou(MASK_WEIGHT)
            .ok_or("no lambda = 1/3 model")?;
        let gain = masked - base;
        if gain >= IOU_GAIN {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: {base:.3} -> {masked:.3} ({:+.1} pts, {took:.1?})",
            gain * 100.0
        ));
    }
    check(
        wins >= SEEDS_NEEDED && !slow,
        format!(
            "{wins}/{SEEDS} seeds gain >= {:.0} pts (need {SEEDS_NEEDED}); {}",
            IOU_GAIN * 100.0,
            lines.join("; ")
        ),
    )
}

fn labeler_goldens() -> Outcome {
    let vocab = Vocabulary::builtin();
    let rows: [(&str, &[(&str, Location)]); 8] = [
        (
            "the heart is enlarged without pericardial effusion",
            &[("cardiomegaly", Location::Heart)],
        ),
        (
            "there is a nodule in the right upper lobe",
            &[("nodule", Location::RightLung)],
        ),
        ("left pneumonia", &[("pneumonia", Location::LeftLung)]),
        (
            "calcifications in the aorta",
            &[("calcification", Location::GreatVessel)],
        ),
        (
            "a calcified granuloma is visible in the apex of the left lung",
            &[
                ("calcification", Location::LeftLung),
                ("granuloma", Location::LeftLung),
            ],
        ),
        (
            "the catheter tip is visible in the SVC",
            &[("catheter_or_port", Location::GreatVessel)],
        ),
        ("The lungs are clear", &[]),
        ("The consolidation has resolved", &[]),
    ];
    let sorted = |items: &[(&str, Location)]| -> Vec<LabelPair> {
        let mut v: Vec<LabelPair> = items.iter().map(|(a, l)| LabelPair::new(a, *l)).collect();
        v.sort();
        v
    };
    let mut bad = Vec::new();
    for (sentence, want) in rows {
        if vocab.label_report("golden", &[sentence]).pairs() != sorted(want).as_slice() {
            bad.push(sentence);
        }
    }
    let all: Vec<(&str, Location)> = rows.iter().flat_map(|(_, w)| w.iter().copied()).collect();
    let sentences: Vec<&str> = rows.iter().map(|(s, _)| *s).collect();
    let combined = vocab.label_report("golden", &sentences);
    let want_all: BTreeSet<LabelPair> = sorted(&all).into_iter().collect();
    let combined_ok = combined.pairs().iter().cloned().collect::<BTreeSet<_>>() == want_all
        && combined.pairs().len() == want_all.len();
    check(
        bad.is_empty() && combined_ok,
        format!(
            "{}/{} sentences exact (2 normal rows yield nothing); whole report gives {} pairs (want {}){}",
            rows.len() - bad.len(),
            rows.len(),
            combined.pairs().len(),
            want_all.len(),
            if bad.is_empty() { String::new() } else { format!("; mismatched: {bad:?}") }
        ),
    )
}

fn segmentation() -> Outcome {
    let params = SegParams::default();
    let mut min_dice = f64::INFINITY;
    let mut partition = true;
    for seed in 0..5u64 {
        let ph = generate_phantom(&PhantomSpec::standard(
            format!("seg{seed}"),
            [24, 40, 40],
            seed,
        ))
        .map_err(|e| e.to_string())?;
        let truth = ph
            .masks
            .right_lung
            .union(&ph.masks.left_lung, Organ::Lungs)
            .map_err(|e| e.to_string())?;
        let lungs = segment_lungs(&ph.volume, &params).map_err(|e| e.to_string())?;
        min_dice = min_dice.min(lungs.dice(&truth).map_err(|e| e.to_string())?);
        let (right, left) = split_left_right(&lungs).map_err(|e| e.to_string())?;
        for ((&r, &l), &u) in right
            .bits
            .iter()
            .zip(left.bits.iter())
            .zip(lungs.bits.iter())
        {
            partition &= !(r && l) && (r || l) == u;
        }
    }
    let n = 25u64;
    let mut fallbacks = 0;
    for i in 0..n {
        let ph = generate_phantom(&PhantomSpec::standard(
            format!("qc{i}"),
            [16, 32, 32],
            100 + i,
        ))
        .map_err(|e| e.to_string())?;
        let vol = if i == 7 {
            let mut vox = ph.volume.voxels().clone();
            for (v, &l) in vox.iter_mut().zip(ph.masks.left_lung.bits.iter()) {
                if l {
                    *v = 0.5;
                }
            }
            CtVolume::new("broken", vox, [1.0; 3]).map_err(|e| e.to_string())?
        } else {
            ph.volume
        };
        if segment_organs(&vol, &params)
            .map_err(|e| e.to_string())?
            .heuristic
        {
            fallbacks += 1;
        }
    }
    let rate = fallbacks as f64 / n as f64;
    check(
        min_dice >= DICE_MIN && partition && rate == 0.04,
        format!("min lung Dice {min_dice:.4} (need {DICE_MIN}); exact partition: {partition}; fallback rate {rate} with 1/{n} injected"),
    )
}

fn downsampling() -> Outcome {
    let mut spec = PhantomSpec::standard("asym", [24, 32, 32], 3);
    spec.right_lung.radii[1] *= 0.8;
    spec.left_lung.center[0] += 2.0;
    let ph = generate_phantom(&spec).map_err(|e| e.to_string())?;
    let rows = vec![
        BTreeSet::from([Location::RightLung]),
        BTreeSet::from([Location::LeftLung]),
        BTreeSet::from([Location::Heart]),
    ];
    let configs = DownsampleConfig::ablation_grid();
    let mut grids = Vec::new();
    for cfg in &configs {
        let gt = build_gtruth_from_locations(
            &rows,
            &ph.masks,
            false,
            [8, 6, 6],
            cfg,
            AbsentMode::AllForbidden,
        )
        .map_err(|e| e.to_string())?;
        grids.push(gt.g);
    }
    let distinct = (0..grids.len()).all(|i| (i + 1..grids.len()).all(|j| grids[i] != grids[j]));
    let default = DownsampleConfig::default();
    let default_ok = default.algo == DownsampleAlgo::Nearest && !default.dilate;
    let names: Vec<String> = configs
        .iter()
        .map(|c| {
            format!(
                "{}{}",
                c.algo.as_str(),
                if c.dilate { "+dilate" } else { "" }
            )
        })
        .collect();
    check(
        configs.len() == 6 && distinct && default_ok,
        format!("{} configs ran [{}]; pairwise distinct: {distinct}; default nearest without dilation: {default_ok}", configs.len(), names.join(", ")),
    )
}

fn organ_iou_cases() -> Outcome {
    let allowed =
        Array4::from_shape_vec((1, 1, 2, 2), vec![true, true, true, false]).expect("shape");
    let present = [true];
    let iou = |att: Vec<f64>| {
        let a = Array4::from_shape_vec((1, 1, 2, 2), att).expect("shape");
        let scan = IouScan {
            attention: a.view(),
            allowed: allowed.view(),
            present: &present,
        };
        iou_at(&[scan], 0, 0.5, IouMode::Count)
    };
    let inside = iou(vec![0.9, 0.8, 0.7, 0.1]);
    let outside = iou(vec![0.1, 0.2, 0.0, 0.9]);
    let mixed = iou(vec![0.9, 0.9, 0.9, 0.9]);
    check(
        inside == Some(1.0) && outside == Some(0.0) && mixed == Some(0.75),
        format!("all allowed {inside:?}, all forbidden {outside:?}, 3 in / 1 out {mixed:?}"),
    )
}

fn auroc_sanity() -> Outcome {
    let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
    let separable: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| if y { 10.0 + i as f64 } else { i as f64 / 10.0 })
        .collect();
    let sep = auroc(&separable, &labels);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 1000;
    let rand_labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let rand_scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let random = auroc(&rand_scores, &rand_labels);
    let tied = auroc(&vec![0.3; 50], &labels[..50]);
    let ok = sep == Some(1.0)
        && random.is_some_and(|a| (a - 0.5).abs() <= AUROC_RANDOM_TOL)
        && tied == Some(0.5);
    check(ok, format!("separable {sep:?}, independent n={n} {random:?} (0.5 +/- {AUROC_RANDOM_TOL}), all tied {tied:?}"))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if let Ok(bytes) = std::fs::read(&path) {
                out.insert(
                    path.strip_prefix(root).expect("under root").to_path_buf(),
                    bytes,
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    let mut trees = Vec::new();
    for (name, threads) in runs {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_axialnet"))
            .args([
                "run-experiment",
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
            ])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "run {name} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        trees.push(files_under(&out));
    }
    let same = trees[0] == trees[1] && trees[0] == trees[2];
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v) || trees[2].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .take(5)
        .collect();
    check(
        same && !trees[0].is_empty(),
        format!(
            "{} files identical across two 1-thread runs and a 4-thread run: {same}{}",
            trees[0].len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differ: {differing:?}")
            }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("faithfulness identity", faithfulness),
        ("closed form equals gradient path", path_equivalence),
        ("Grad-CAM vs HiResCAM", cam_equivalence),
        ("gradients vs finite differences", gradients),
        ("mask loss improves HiResCAM OrganIoU", mask_loss_comparison),
        ("report labeler goldens", labeler_goldens),
        ("segmentation fidelity", segmentation),
        ("downsampling ablation", downsampling),
        ("OrganIoU boundary cases", organ_iou_cases),
        ("AUROC sanity", auroc_sanity),
        ("run-experiment determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
