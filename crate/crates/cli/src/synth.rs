//! Phantom corpus with planted findings, a correlated confounder and
//! template-rendered report sentences.

use std::fs;

use axialnet::report_labeler::LabelPair;
use axialnet::volgrid::{
    generate_phantom, save_mask, save_volume, Blob, Confounder, Phantom, PhantomSpec, PlantedLesion,
};
use axialnet::Location;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, CorpusConfig, FindingSpec};
use crate::error::{CliError, Result};
use crate::layout::{read_json, write_json, Layout};

const STREAM_CORPUS: u64 = 1;

/// Scan ids of each split, sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What was planted in one scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub scan_id: String,
    pub pairs: Vec<LabelPair>,
    pub confounder: bool,
}

/// One scan before rendering.
#[derive(Clone, Debug)]
pub struct PlannedScan {
    pub spec: PhantomSpec,
    pub sentences: Vec<String>,
}

pub fn scan_id(i: usize) -> String {
    format!("scan{i:04}")
}

/// Location wording for a planted finding.
fn location_phrase(loc: Location, rng: &mut ChaCha8Rng) -> Option<String> {
    let lobes: &[&str] = match loc {
        Location::RightLung => &["right upper lobe", "right middle lobe", "right lower lobe"],
        Location::LeftLung => &["left upper lobe", "left lower lobe", "lingula"],
        _ => return None,
    };
    Some(format!("in the {}", lobes.choose(rng).expect("non-empty")))
}

/// Report sentence for `finding` at `loc`.
pub fn render_sentence(finding: &FindingSpec, loc: Location, rng: &mut ChaCha8Rng) -> String {
    match location_phrase(loc, rng) {
        Some(where_) => format!("{} {where_}", finding.phrase),
        None => finding.phrase.clone(),
    }
}

const NORMAL_FILLER: [&str; 5] = [
    "no pleural effusion",
    "there is no pneumothorax",
    "no evidence of lymphadenopathy",
    "the aorta is normal",
    "the airways are patent",
];

fn organ_contains(spec: &PhantomSpec, loc: Location, idx: [usize; 3]) -> bool {
    match loc {
        Location::RightLung => spec.right_lung.contains(idx),
        Location::LeftLung => spec.left_lung.contains(idx),
        Location::LungUnspecified => spec.right_lung.contains(idx) || spec.left_lung.contains(idx),
        _ => spec.mediastinum_contains(idx),
    }
}

/// Every voxel within `radius` of `center`, clipped to the grid.
fn ball(center: [f64; 3], radius: f64, dims: [usize; 3]) -> Vec<[usize; 3]> {
    let blob = Blob { center, radius };
    let range = |a: usize| {
        let lo = (center[a] - radius).floor().max(0.0) as usize;
        let hi = ((center[a] + radius).ceil().max(0.0) as usize).min(dims[a] - 1);
        lo..=hi
    };
    let mut out = Vec::new();
    for s in range(0) {
        for r in range(1) {
            for c in range(2) {
                if blob.contains([s, r, c]) {
                    out.push([s, r, c]);
                }
            }
        }
    }
    out
}

/// Draws a blob center whose ball lies inside the organ. Lung blobs keep a
/// one-voxel margin so the lesion stays enclosed by lung.
fn place_blob(
    spec: &PhantomSpec,
    loc: Location,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 3]> {
    let dims = spec.dims;
    let margin = if loc.is_lung() { 1.0 } else { 0.0 };
    for _ in 0..10_000 {
        let c = [0, 1, 2].map(|a| rng.random_range(0.0..dims[a] as f64 - 1.0));
        let ball = ball(c, radius + margin, dims);
        if !ball.is_empty() && ball.iter().all(|&idx| organ_contains(spec, loc, idx)) {
            return Ok(c);
        }
    }
    Err(CliError::Data(format!(
        "could not place a blob of radius {radius} in {loc} of scan {}",
        spec.scan_id
    )))
}

/// Deterministic plan of the whole corpus.
pub fn plan_corpus(cfg: &CorpusConfig, seed: u64) -> Result<(Vec<PlannedScan>, Manifest)> {
    let mut plans = Vec::with_capacity(cfg.n_scans);
    for i in 0..cfg.n_scans {
        let id = scan_id(i);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CORPUS + 1 + i as u64));
        let mut spec = PhantomSpec::standard(id.clone(), cfg.dims, rng.random());
        spec.noise = cfg.noise;
        for lung in [&mut spec.right_lung, &mut spec.left_lung] {
            for r in lung.radii.iter_mut() {
                *r *= 1.0 + cfg.lung_jitter * rng.random_range(-1.0..=1.0);
            }
        }
        let mut sentences = Vec::new();
        let mut present = Vec::with_capacity(cfg.findings.len());
        for finding in &cfg.findings {
            let on = rng.random_bool(finding.prevalence);
            present.push(on);
            if !on {
                continue;
            }
            let loc = *finding
                .locations
                .choose(&mut rng)
                .expect("validated non-empty");
            let center = place_blob(&spec, loc, finding.radius, &mut rng)?;
            spec.lesions.push(PlantedLesion {
                abnormality: finding.abnormality.clone(),
                location: loc,
                blob: Blob {
                    center,
                    radius: finding.radius,
                },
                delta: finding.delta,
            });
            sentences.push(render_sentence(finding, loc, &mut rng));
        }
        if let Some(conf) = &cfg.confounder {
            let k = cfg
                .findings
                .iter()
                .position(|f| f.label == conf.tracks)
                .expect("validated");
            let p = if present[k] {
                conf.p_present
            } else {
                conf.p_absent
            };
            if rng.random_bool(p) {
                let center = [0, 1, 2].map(|a| conf.center[a] * (cfg.dims[a] as f64 - 1.0));
                spec.confounder = Some(Confounder {
                    location: conf.location,
                    blob: Blob {
                        center,
                        radius: conf.radius,
                    },
                    delta: conf.delta,
                });
            }
        }
        if !spec.lesions.iter().any(|l| l.location.is_lung()) {
            sentences.push("the lungs are clear".into());
        }
        sentences.push(
            NORMAL_FILLER
                .choose(&mut rng)
                .expect("non-empty")
                .to_string(),
        );
        plans.push(PlannedScan { spec, sentences });
    }

    let mut ids: Vec<String> = (0..cfg.n_scans).map(scan_id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        STREAM_CORPUS,
    )));
    let n_train = (cfg.n_scans as f64 * cfg.fractions[0]).round() as usize;
    let n_val =
        ((cfg.n_scans as f64 * cfg.fractions[1]).round() as usize).min(cfg.n_scans - n_train);
    let mut manifest = Manifest {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    manifest.train.sort();
    manifest.val.sort();
    manifest.test.sort();
    Ok((plans, manifest))
}

pub fn truth_record(ph: &Phantom, confounder: bool) -> TruthRecord {
    TruthRecord {
        scan_id: ph.volume.scan_id().to_string(),
        pairs: ph
            .labels
            .iter()
            .map(|(a, l)| LabelPair::new(a, *l))
            .collect(),
        confounder,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub n_scans: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Renders and writes the corpus under `layout.corpus()`.
pub fn write_corpus(layout: &Layout, cfg: &CorpusConfig, seed: u64) -> Result<SynthSummary> {
    let (plans, manifest) = plan_corpus(cfg, seed)?;
    for dir in [layout.volumes(), layout.truth_masks(), layout.reports()] {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let truths: Vec<TruthRecord> = plans
        .par_iter()
        .map(|plan| -> Result<TruthRecord> {
            let ph = generate_phantom(&plan.spec)?;
            let id = plan.spec.scan_id.as_str();
            save_volume(&ph.volume, &layout.volumes().join(id))?;
            for m in [
                &ph.masks.right_lung,
                &ph.masks.left_lung,
                &ph.masks.mediastinum,
            ] {
                save_mask(
                    m,
                    &layout.truth_masks().join(format!("{id}-{}", m.organ)),
                    "phantom",
                )?;
            }
            let path = layout.report(id);
            let mut text = plan.sentences.join("\n");
            text.push('\n');
            fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            Ok(truth_record(&ph, plan.spec.confounder.is_some()))
        })
        .collect::<Result<_>>()?;
    write_json(&layout.truth_labels(), &truths)?;
    write_json(&layout.manifest(), &manifest)?;
    Ok(SynthSummary {
        n_scans: plans.len(),
        train: manifest.train.len(),
        val: manifest.val.len(),
        test: manifest.test.len(),
    })
}

pub fn read_manifest(layout: &Layout) -> Result<Manifest> {
    read_json(&layout.manifest())
}

/// Report sentences of one scan, one per line.
pub fn read_report(layout: &Layout, scan_id: &str) -> Result<Vec<String>> {
    let path = layout.report(scan_id);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}
