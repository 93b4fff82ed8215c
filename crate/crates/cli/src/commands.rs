//! Subcommand implementations. Machine-readable JSON goes to stdout; human
//! diagnostics go to stderr.

use crate::config::RunConfig;
use serde_json::json;
use std::path::{Path, PathBuf};
use subpool_core::data::{
    generate_correlated, generate_synthetic, load_feature_dataset, query_gallery_all, read_tensor,
    split_dataset, write_dataset, SplitSpec, SynthConfig, SynthItem,
};
use subpool_core::eval::{
    evaluate_with_threads, export_ranking, ranking_to_csv, EvalProtocol, Metric, MultiPool,
    QueryMode, Sample,
};
use subpool_core::gradcheck;
use subpool_core::pipeline::{
    descriptors, load_checkpoint_into, save_checkpoint, train, DescriptorMetric, ModelConfig,
    ParamStore, PoolingMode, TrainItem, TrainOpts,
};
use subpool_core::rng::Rng;
use subpool_core::{Error, Result};

pub struct SynthParams {
    pub ids: usize,
    pub per_id: usize,
    pub cameras: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub intra_noise: f64,
    pub camera_shift: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub correlated: Option<usize>,
}

pub fn cmd_synth(p: &SynthParams) -> Result<serde_json::Value> {
    let cfg = SynthConfig {
        num_ids: p.ids,
        images_per_id: p.per_id,
        cameras: p.cameras,
        channels: p.channels,
        height: p.height,
        width: p.width,
        intra_noise: p.intra_noise,
        camera_shift: p.camera_shift,
        seed: p.seed,
    };
    let items = match p.correlated {
        Some(rank) => generate_correlated(&cfg, rank)?,
        None => generate_synthetic(&cfg)?,
    };
    let manifest = write_dataset(&p.out, &items)?;
    Ok(json!({
        "ids": p.ids,
        "images": items.len(),
        "cameras": p.cameras,
        "channels": p.channels,
        "height": p.height,
        "width": p.width,
        "seed": p.seed,
        "out": p.out.display().to_string(),
        "manifest": manifest.display().to_string(),
    }))
}

/// Model assembled from the run config plus the dataset's tensor dims.
fn build_model(cfg: &RunConfig, items: &[SynthItem], num_ids: usize) -> Result<ModelConfig> {
    let first = items.first().ok_or_else(|| Error::InvalidConfig {
        detail: "empty dataset".to_string(),
    })?;
    for item in items {
        if (item.channels, item.height, item.width) != (first.channels, first.height, first.width) {
            return Err(Error::Format {
                detail: format!(
                    "inconsistent tensor dims in dataset: {}x{}x{} vs {}x{}x{}",
                    item.channels,
                    item.height,
                    item.width,
                    first.channels,
                    first.height,
                    first.width
                ),
            });
        }
    }
    let model = ModelConfig {
        input_channels: first.channels,
        input_height: first.height,
        input_width: first.width,
        conv_stages: cfg.conv_stages()?,
        reduce_dim: cfg.reduce_dim,
        pool_rank: cfg.pool_rank,
        pooling: cfg.pooling,
        num_ids,
        loss_mode: cfg.loss,
        margin: cfg.margin,
        reduction: cfg.reduction,
        metric: cfg.metric,
        lambda_tl: cfg.lambda_tl,
    };
    model.validate()?;
    Ok(model)
}

fn dataset_pairs(items: &[SynthItem]) -> Vec<(i64, i64)> {
    items.iter().map(|i| (i.person_id, i.camera_id)).collect()
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<serde_json::Value> {
    if cfg.manifest.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "data.manifest is required for training".to_string(),
        });
    }
    let items = load_feature_dataset(Path::new(&cfg.manifest))?;
    let split = split_dataset(
        &dataset_pairs(&items),
        &SplitSpec {
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
            queries_per_group: cfg.queries_per_group,
        },
    )?;
    let model = build_model(cfg, &items, split.train_ids.len())?;
    let train_set: Vec<TrainItem> = split
        .train_images
        .iter()
        .map(|&idx| {
            let item = &items[idx];
            TrainItem {
                values: item.values.clone(),
                label: split
                    .train_ids
                    .binary_search(&item.person_id)
                    .expect("train image with unknown id"),
            }
        })
        .collect();
    let opts = TrainOpts {
        epochs: cfg.epochs,
        steps_per_epoch: cfg.steps_per_epoch,
        batch_p: cfg.batch_p,
        batch_k: cfg.batch_k,
        adam: cfg.adam(),
        seed: cfg.seed,
    };
    let output = train(&train_set, &model, &opts)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        detail: format!("creating {}: {e}", out_dir.display()),
    })?;
    let checkpoint = out_dir.join("checkpoint.spck");
    save_checkpoint(&checkpoint, &output.params, Some(&output.adam))?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = String::from("epoch,loss_id,loss_tl,lr\n");
    for row in &output.log {
        log.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.loss_id, row.loss_tl, row.lr
        ));
    }
    std::fs::write(&log_path, log).map_err(|e| Error::Io {
        detail: format!("writing {}: {e}", log_path.display()),
    })?;
    // Provenance echo of the effective configuration.
    std::fs::write(out_dir.join("effective.cfg"), cfg.to_text()).map_err(|e| Error::Io {
        detail: format!("writing effective.cfg: {e}"),
    })?;

    let last = output.log.last();
    Ok(json!({
        "epochs": cfg.epochs,
        "steps_per_epoch": if cfg.steps_per_epoch == 0 { json!("auto") } else { json!(cfg.steps_per_epoch) },
        "train_ids": split.train_ids.len(),
        "train_images": split.train_images.len(),
        "initial_loss": output.initial_loss,
        "final_loss": output.final_loss,
        "final_loss_id": last.map(|l| l.loss_id),
        "final_loss_tl": last.map(|l| l.loss_tl),
        "jitter_events": output.jitter_events,
        "checkpoint": checkpoint.display().to_string(),
        "log": log_path.display().to_string(),
    }))
}

pub struct EvalParams {
    pub checkpoint: Option<PathBuf>,
    pub descriptor_files: bool,
    pub eval_all: bool,
    pub export_depth: Option<usize>,
    pub ranking_out: Option<PathBuf>,
    pub eval_threads: usize,
}

fn protocol_from(cfg: &RunConfig) -> Result<EvalProtocol> {
    let metric = match cfg.metric {
        DescriptorMetric::FlattenedEuclidean => Metric::Euclidean,
        DescriptorMetric::Projection => {
            if cfg.pooling != PoolingMode::Subspace {
                return Err(Error::InvalidConfig {
                    detail: "model.metric = projection requires model.pooling = subspace"
                        .to_string(),
                });
            }
            Metric::Projection { k: cfg.pool_rank }
        }
    };
    Ok(EvalProtocol {
        mode: if cfg.eval_mode_multi {
            QueryMode::Multi
        } else {
            QueryMode::Single
        },
        cross_camera: cfg.cross_camera,
        metric,
        cmc_max_rank: cfg.cmc_max_rank,
        fscore_cutoff: cfg.fscore_cutoff,
        multi_pool: if cfg.multi_pool_max {
            MultiPool::ElementwiseMax
        } else {
            MultiPool::Average
        },
    })
}

pub fn cmd_eval(cfg: &RunConfig, params: &EvalParams) -> Result<serde_json::Value> {
    if cfg.manifest.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "data.manifest is required for evaluation".to_string(),
        });
    }
    let manifest_path = Path::new(&cfg.manifest);

    // Query/gallery descriptor samples, either straight from descriptor
    // tensor files or by running the model from a checkpoint.
    let (queries, gallery) = if params.descriptor_files {
        let entries = subpool_core::data::load_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut samples = Vec::with_capacity(entries.len());
        for e in &entries {
            let tensor = read_tensor(&base.join(&e.path))?;
            samples.push(Sample::new(
                tensor.data.iter().map(|&x| x as f64).collect(),
                e.person_id,
                e.camera_id,
                e.path.trim_end_matches(".sptf"),
            ));
        }
        let pairs: Vec<(i64, i64)> = samples.iter().map(|s| (s.person_id, s.camera_id)).collect();
        let (q_idx, g_idx) = if params.eval_all {
            query_gallery_all(&pairs, cfg.seed, cfg.queries_per_group)?
        } else {
            let split = split_dataset(
                &pairs,
                &SplitSpec {
                    train_fraction: cfg.train_fraction,
                    seed: cfg.seed,
                    queries_per_group: cfg.queries_per_group,
                },
            )?;
            (split.query_images, split.gallery_images)
        };
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        (pick(&q_idx), pick(&g_idx))
    } else {
        let checkpoint = params
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig {
                detail: "--checkpoint is required (or pass --descriptors)".to_string(),
            })?;
        let items = load_feature_dataset(manifest_path)?;
        let pairs = dataset_pairs(&items);
        let (q_idx, g_idx, num_ids) = if params.eval_all {
            let (q, g) = query_gallery_all(&pairs, cfg.seed, cfg.queries_per_group)?;
            // The checkpoint fixes the classifier width; recover it from the
            // training-side split of the same config.
            let split = split_dataset(
                &pairs,
                &SplitSpec {
                    train_fraction: cfg.train_fraction,
                    seed: cfg.seed,
                    queries_per_group: cfg.queries_per_group,
                },
            )?;
            (q, g, split.train_ids.len())
        } else {
            let split = split_dataset(
                &pairs,
                &SplitSpec {
                    train_fraction: cfg.train_fraction,
                    seed: cfg.seed,
                    queries_per_group: cfg.queries_per_group,
                },
            )?;
            let n = split.train_ids.len();
            (split.query_images, split.gallery_images, n)
        };
        let model = build_model(cfg, &items, num_ids)?;
        let mut store = ParamStore::init(&model, &mut Rng::new(cfg.seed));
        load_checkpoint_into(checkpoint, &mut store)?;
        let to_samples = |idx: &[usize]| -> Result<Vec<Sample>> {
            let images: Vec<Vec<f64>> = idx.iter().map(|&i| items[i].values.clone()).collect();
            let descs = descriptors(&model, &store, &images)?;
            Ok(idx
                .iter()
                .zip(descs)
                .map(|(&i, d)| {
                    Sample::new(d, items[i].person_id, items[i].camera_id, &items[i].tag)
                })
                .collect())
        };
        (to_samples(&q_idx)?, to_samples(&g_idx)?)
    };

    let protocol = protocol_from(cfg)?;
    let report = evaluate_with_threads(&queries, &gallery, &protocol, params.eval_threads)?;
    if let Some(depth) = params.export_depth {
        let rows = export_ranking(&queries, &gallery, &protocol, depth)?;
        let csv = ranking_to_csv(&rows);
        let path = params
            .ranking_out
            .clone()
            .unwrap_or_else(|| PathBuf::from("ranking.csv"));
        std::fs::write(&path, csv).map_err(|e| Error::Io {
            detail: format!("writing {}: {e}", path.display()),
        })?;
        eprintln!("ranking list written to {}", path.display());
    }
    // The report IS the machine-readable output; parse back to a Value so
    // the caller prints one canonical JSON document.
    Ok(serde_json::from_str(&report.to_json()).expect("report JSON is valid"))
}

pub fn cmd_gradcheck(
    seed: u64,
    degenerate: bool,
    stage: Option<&str>,
) -> Result<(serde_json::Value, bool)> {
    let reports = gradcheck::run(seed, degenerate, stage)?;
    let all_pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        eprintln!(
            "stage {:<18} max rel err {:>12.3e}  tolerance {:>8.0e}  {}",
            r.stage,
            r.max_rel_err,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    let value = json!({
        "seed": seed,
        "stages": serde_json::to_value(&reports).expect("stage reports serialize"),
        "pass": all_pass,
    });
    Ok((value, all_pass))
}
