use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Gradients, HeadParams, LabelVector, LossParts, TrainConfig};
use crate::error::Result;
use crate::gt_builder::AttentionGroundTruth;
use crate::volgrid::FeatureMapStack;

/// One training scan.
#[derive(Clone, Debug)]
pub struct Example {
    pub scan_id: String,
    pub z: FeatureMapStack,
    pub y: LabelVector,
    pub g: AttentionGroundTruth,
}

/// Mean losses over the training set; epoch 0 is the initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub class_loss: f64,
    pub mask_loss: f64,
    pub total_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub velocity: Gradients,
    pub history: Vec<EpochStats>,
    pub steps: u64,
}

/// Classical momentum: `v <- mu v - eta g`, then `theta <- theta + v`.
pub fn sgd_step(
    p: &mut HeadParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    cfg: &TrainConfig,
) {
    let (mu, eta) = (cfg.momentum, cfg.learning_rate);
    velocity
        .w
        .zip_mut_with(&grads.w, |v, &g| *v = mu * *v - eta * g);
    velocity
        .b
        .zip_mut_with(&grads.b, |v, &g| *v = mu * *v - eta * g);
    let (w, b) = p.parts_mut();
    *w += &velocity.w;
    *b += &velocity.b;
}

fn epoch_stats(
    examples: &[Example],
    order: &[usize],
    p: &HeadParams,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let objective = cfg.objective();
    let parts: Vec<LossParts> = order
        .par_iter()
        .map(|&i| {
            let ex = &examples[i];
            objective.loss(&ex.z, p, &ex.y, &ex.g)
        })
        .collect::<Result<_>>()?;
    let n = parts.len().max(1) as f64;
    let (mut class, mut mask, mut total) = (0.0, 0.0, 0.0);
    for lp in &parts {
        class += lp.class;
        mask += lp.mask;
        total += lp.total;
    }
    Ok(EpochStats {
        epoch,
        class_loss: class / n,
        mask_loss: mask / n,
        total_loss: total / n,
    })
}

/// Mini-batch SGD with momentum.
///
/// Examples are visited in an order shuffled per epoch from the scan-id
/// order with the configured seed. Per-scan gradients inside a batch may be
/// computed in parallel; they are always summed in batch order, so the
/// result does not depend on the number of worker threads.
pub fn train(examples: &[Example], cfg: &TrainConfig, init: HeadParams) -> Result<TrainOutcome> {
    cfg.validate()?;
    let objective = cfg.objective();
    let mut sorted: Vec<usize> = (0..examples.len()).collect();
    sorted.sort_by(|&a, &b| examples[a].scan_id.cmp(&examples[b].scan_id));

    let mut params = init;
    let mut velocity = Gradients::zeros_like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = vec![epoch_stats(examples, &sorted, &params, cfg, 0)?];
    let mut steps = 0u64;

    for epoch in 1..=cfg.epochs {
        let mut order = sorted.clone();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let per_scan: Vec<Gradients> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &examples[i];
                    objective.gradients(&ex.z, &params, &ex.y, &ex.g)
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&params);
            for g in &per_scan {
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut params, &grads, &mut velocity, cfg);
            steps += 1;
        }
        history.push(epoch_stats(examples, &sorted, &params, cfg, epoch)?);
    }
    Ok(TrainOutcome {
        params,
        velocity,
        history,
        steps,
    })
}
