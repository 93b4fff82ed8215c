//! Training loop: P x K batch sampling, combined loss, Adam updates, and a
//! per-epoch loss log. Deterministic for a fixed seed.

use super::optim::{adam_step, lr_at_epoch, AdamConfig, AdamState};
use super::{backward, forward, LossMode, ModelConfig, ParamStore, PoolingMode};
use crate::error::{Error, Result};
use crate::losses::{batch_hard_triplet, cross_entropy, TripletBatch};
use crate::numerics::Matrix;
use crate::rng::Rng;

/// One training example: a flat channel-major image (or feature map, in
/// ingestion mode) with a class label in `0..num_ids`.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub values: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub epochs: usize,
    /// Steps per epoch; 0 derives `ceil(items / (P*K))`.
    pub steps_per_epoch: usize,
    pub batch_p: usize,
    pub batch_k: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            epochs: 50,
            steps_per_epoch: 0,
            batch_p: 8,
            batch_k: 4,
            adam: AdamConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_id: f64,
    pub loss_tl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParamStore,
    pub adam: AdamState,
    pub log: Vec<EpochLog>,
    pub jitter_events: usize,
    /// Combined loss of the very first and very last step.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Train a model from seeded initialization.
///
/// Every epoch runs `steps_per_epoch` steps; each step samples P identities
/// (those with at least K images) and K distinct images per identity.
/// Identical seeds give bitwise-identical parameters and logs.
pub fn train(items: &[TrainItem], cfg: &ModelConfig, opts: &TrainOpts) -> Result<TrainOutput> {
    cfg.validate()?;
    if opts.batch_p < 2 || opts.batch_k < 2 {
        return Err(Error::InvalidConfig {
            detail: format!(
                "P x K batches need P >= 2 and K >= 2, got {}x{}",
                opts.batch_p, opts.batch_k
            ),
        });
    }
    for (i, item) in items.iter().enumerate() {
        if item.label >= cfg.num_ids {
            return Err(Error::LabelOutOfRange {
                label: item.label,
                num_classes: cfg.num_ids,
            });
        }
        if item.values.len() != cfg.input_len() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "training item {i} has {} values, config expects {}",
                    item.values.len(),
                    cfg.input_len()
                ),
            });
        }
    }
    // Images per identity.
    let mut by_id: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_ids];
    for (idx, item) in items.iter().enumerate() {
        by_id[item.label].push(idx);
    }
    let eligible: Vec<usize> = (0..cfg.num_ids)
        .filter(|&id| by_id[id].len() >= opts.batch_k)
        .collect();
    if eligible.len() < opts.batch_p {
        return Err(Error::InvalidConfig {
            detail: format!(
                "need {} identities with at least {} images, found {}",
                opts.batch_p,
                opts.batch_k,
                eligible.len()
            ),
        });
    }

    let mut rng = Rng::new(opts.seed);
    let mut store = ParamStore::init(cfg, &mut rng);
    let mut adam = AdamState::new(opts.adam.clone(), &store);
    let steps_per_epoch = if opts.steps_per_epoch > 0 {
        opts.steps_per_epoch
    } else {
        items.len().div_ceil(opts.batch_p * opts.batch_k)
    };

    let mut log = Vec::with_capacity(opts.epochs);
    let mut jitter_events = 0usize;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for epoch in 1..=opts.epochs {
        let mut epoch_id = 0.0;
        let mut epoch_tl = 0.0;
        for _ in 0..steps_per_epoch {
            // Sample P identities, then K distinct images each.
            let mut ids = eligible.clone();
            rng.shuffle(&mut ids);
            ids.truncate(opts.batch_p);
            let mut images = Vec::with_capacity(opts.batch_p * opts.batch_k);
            let mut labels = Vec::with_capacity(opts.batch_p * opts.batch_k);
            for &id in &ids {
                let mut pool = by_id[id].clone();
                rng.shuffle(&mut pool);
                for &img_idx in pool.iter().take(opts.batch_k) {
                    images.push(items[img_idx].values.clone());
                    labels.push(id);
                }
            }

            let pass = forward(cfg, &store, &images, Some(&mut rng))?;
            jitter_events += pass.jitter_events;
            let n = images.len();
            let d_desc = cfg.descriptor_len();

            let (loss_id, d_logits) = match cfg.loss_mode {
                LossMode::Tl => (0.0, Matrix::zeros(n, cfg.num_ids)),
                _ => {
                    let ce = cross_entropy(&pass.logits, &labels)?;
                    (ce.loss, ce.grad)
                }
            };
            let (loss_tl, d_flat) = match cfg.loss_mode {
                LossMode::Id => (0.0, Matrix::zeros(n, d_desc)),
                _ => {
                    let batch = TripletBatch::new(pass.flat.clone(), labels.clone(), cfg.margin)?;
                    let tl = batch_hard_triplet(&batch, cfg.reduction);
                    let scale = match cfg.loss_mode {
                        LossMode::IdTl => cfg.lambda_tl,
                        _ => 1.0,
                    };
                    (tl.loss, tl.grad.scale(scale))
                }
            };
            let total = match cfg.loss_mode {
                LossMode::Id => loss_id,
                LossMode::Tl => loss_tl,
                LossMode::IdTl => loss_id + cfg.lambda_tl * loss_tl,
            };
            if !total.is_finite() {
                return Err(Error::Numeric {
                    detail: format!("non-finite loss at epoch {epoch}"),
                });
            }
            if initial_loss.is_nan() {
                initial_loss = total;
            }
            final_loss = total;
            epoch_id += loss_id;
            epoch_tl += loss_tl;

            store.zero_grads();
            backward(cfg, &mut store, &pass, &d_logits, &d_flat)?;
            adam_step(&mut store, &mut adam, epoch)?;
        }
        log.push(EpochLog {
            epoch,
            loss_id: epoch_id / steps_per_epoch as f64,
            loss_tl: epoch_tl / steps_per_epoch as f64,
            lr: lr_at_epoch(&opts.adam, epoch),
        });
    }

    Ok(TrainOutput {
        params: store,
        adam,
        log,
        jitter_events,
        initial_loss,
        final_loss,
    })
}

/// Descriptor vectors for a set of images under fixed parameters
/// (evaluation path: no jitter, rank errors propagate).
pub fn descriptors(
    cfg: &ModelConfig,
    store: &ParamStore,
    images: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let pass = forward(cfg, store, images, None)?;
    let d = cfg.descriptor_len();
    Ok((0..images.len())
        .map(|i| pass.flat.row(i)[..d].to_vec())
        .collect())
}

/// The effective metric `k` for projection-distance evaluation: descriptor
/// columns only exist under subspace pooling.
pub fn projection_rank(cfg: &ModelConfig) -> Option<usize> {
    match cfg.pooling {
        PoolingMode::Subspace => Some(cfg.pool_rank),
        PoolingMode::ChannelAverage => None,
    }
}
