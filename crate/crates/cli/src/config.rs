//! Flat `key = value` run configuration: one greppable line per option,
//! unknown keys rejected, presets and CLI flags layered on top.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use subpool_core::losses::Reduction;
use subpool_core::pipeline::{AdamConfig, ConvStage, DescriptorMetric, LossMode, PoolingMode};
use subpool_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: String,
    pub train_fraction: f64,
    pub queries_per_group: usize,
    pub conv_widths: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub reduce_dim: usize,
    pub pool_rank: usize,
    pub pooling: PoolingMode,
    pub loss: LossMode,
    pub margin: f64,
    pub reduction: Reduction,
    pub metric: DescriptorMetric,
    pub lambda_tl: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_p: usize,
    pub batch_k: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_start: usize,
    pub decay_factor: f64,
    pub decay_span: usize,
    pub eval_mode_multi: bool,
    pub cross_camera: bool,
    pub cmc_max_rank: usize,
    pub fscore_cutoff: usize,
    pub multi_pool_max: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            manifest: String::new(),
            train_fraction: 0.5,
            queries_per_group: 1,
            conv_widths: vec![],
            conv_strides: vec![],
            reduce_dim: 12,
            pool_rank: 4,
            pooling: PoolingMode::Subspace,
            loss: LossMode::Tl,
            margin: 0.3,
            reduction: Reduction::Mean,
            metric: DescriptorMetric::FlattenedEuclidean,
            lambda_tl: 1.0,
            epochs: 50,
            steps_per_epoch: 4,
            batch_p: 8,
            batch_k: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_start: 40,
            decay_factor: 0.1,
            decay_span: 10,
            eval_mode_multi: false,
            cross_camera: true,
            cmc_max_rank: 20,
            fscore_cutoff: 10,
            multi_pool_max: false,
        }
    }
}

fn bad(detail: String) -> Error {
    Error::InvalidConfig { detail }
}

fn parse_list(value: &str, key: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("{key}: unparseable entry \"{part}\"")))
        })
        .collect()
}

impl RunConfig {
    /// Full-scale reference training regime: Adam at 2e-4 for 300 epochs
    /// with exponential decay from epoch 151, and 32 x 4 batches.
    pub fn apply_paper_preset(&mut self) {
        self.lr = 2e-4;
        self.epochs = 300;
        self.decay_start = 150;
        self.decay_factor = 0.1;
        self.decay_span = 150;
        self.batch_p = 32;
        self.batch_k = 4;
        self.steps_per_epoch = 0;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_f64 = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("{key}: unparseable number \"{v}\"")))
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("{key}: unparseable count \"{v}\"")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v.trim() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(bad(format!("{key}: expected true/false, got \"{other}\""))),
            }
        };
        match key {
            "seed" => {
                self.seed = value
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| bad(format!("seed: unparseable \"{value}\"")))?
            }
            "data.manifest" => self.manifest = value.trim().to_string(),
            "split.train_fraction" => self.train_fraction = parse_f64(value)?,
            "split.queries_per_group" => self.queries_per_group = parse_usize(value)?,
            "model.conv_widths" => self.conv_widths = parse_list(value, key)?,
            "model.conv_strides" => self.conv_strides = parse_list(value, key)?,
            "model.reduce_dim" => self.reduce_dim = parse_usize(value)?,
            "model.pool_rank" => self.pool_rank = parse_usize(value)?,
            "model.pooling" => {
                self.pooling = match value.trim() {
                    "subspace" => PoolingMode::Subspace,
                    "average" => PoolingMode::ChannelAverage,
                    other => return Err(bad(format!("model.pooling: \"{other}\""))),
                }
            }
            "model.loss" => {
                self.loss = match value.trim() {
                    "id" => LossMode::Id,
                    "tl" => LossMode::Tl,
                    "id+tl" => LossMode::IdTl,
                    other => return Err(bad(format!("model.loss: \"{other}\""))),
                }
            }
            "model.margin" => self.margin = parse_f64(value)?,
            "model.reduction" => {
                self.reduction = match value.trim() {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    other => return Err(bad(format!("model.reduction: \"{other}\""))),
                }
            }
            "model.metric" => {
                self.metric = match value.trim() {
                    "euclidean" => DescriptorMetric::FlattenedEuclidean,
                    "projection" => DescriptorMetric::Projection,
                    other => return Err(bad(format!("model.metric: \"{other}\""))),
                }
            }
            "model.lambda_tl" => self.lambda_tl = parse_f64(value)?,
            "train.epochs" => self.epochs = parse_usize(value)?,
            "train.steps_per_epoch" => self.steps_per_epoch = parse_usize(value)?,
            "train.batch_p" => self.batch_p = parse_usize(value)?,
            "train.batch_k" => self.batch_k = parse_usize(value)?,
            "train.lr" => self.lr = parse_f64(value)?,
            "train.beta1" => self.beta1 = parse_f64(value)?,
            "train.beta2" => self.beta2 = parse_f64(value)?,
            "train.epsilon" => self.epsilon = parse_f64(value)?,
            "train.decay_start" => self.decay_start = parse_usize(value)?,
            "train.decay_factor" => self.decay_factor = parse_f64(value)?,
            "train.decay_span" => self.decay_span = parse_usize(value)?,
            "eval.mode" => {
                self.eval_mode_multi = match value.trim() {
                    "single" => false,
                    "multi" => true,
                    other => return Err(bad(format!("eval.mode: \"{other}\""))),
                }
            }
            "eval.cross_camera" => self.cross_camera = parse_bool(value)?,
            "eval.cmc_max_rank" => self.cmc_max_rank = parse_usize(value)?,
            "eval.fscore_cutoff" => self.fscore_cutoff = parse_usize(value)?,
            "eval.multi_pool" => {
                self.multi_pool_max = match value.trim() {
                    "average" => false,
                    "max" => true,
                    other => return Err(bad(format!("eval.multi_pool: \"{other}\""))),
                }
            }
            other => return Err(bad(format!("unknown config key \"{other}\""))),
        }
        Ok(())
    }

    /// Parse a config file: `key = value` lines, `#` comments, every key at
    /// most once.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            detail: format!("reading {}: {e}", path.display()),
        })?;
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                bad(format!(
                    "{}:{line_no}: expected \"key = value\", found \"{raw}\"",
                    path.display()
                ))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(bad(format!(
                    "{}:{line_no}: duplicate key \"{key}\"",
                    path.display()
                )));
            }
            self.set(key, value).map_err(|e| match e {
                Error::InvalidConfig { detail } => {
                    bad(format!("{}:{line_no}: {detail}", path.display()))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Render every key in documented order (the provenance echo).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("data.manifest", self.manifest.clone());
        kv("split.train_fraction", self.train_fraction.to_string());
        kv(
            "split.queries_per_group",
            self.queries_per_group.to_string(),
        );
        let list = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        kv("model.conv_widths", list(&self.conv_widths));
        kv("model.conv_strides", list(&self.conv_strides));
        kv("model.reduce_dim", self.reduce_dim.to_string());
        kv("model.pool_rank", self.pool_rank.to_string());
        kv(
            "model.pooling",
            match self.pooling {
                PoolingMode::Subspace => "subspace",
                PoolingMode::ChannelAverage => "average",
            }
            .to_string(),
        );
        kv(
            "model.loss",
            match self.loss {
                LossMode::Id => "id",
                LossMode::Tl => "tl",
                LossMode::IdTl => "id+tl",
            }
            .to_string(),
        );
        kv("model.margin", self.margin.to_string());
        kv(
            "model.reduction",
            match self.reduction {
                Reduction::Mean => "mean",
                Reduction::Sum => "sum",
            }
            .to_string(),
        );
        kv(
            "model.metric",
            match self.metric {
                DescriptorMetric::FlattenedEuclidean => "euclidean",
                DescriptorMetric::Projection => "projection",
            }
            .to_string(),
        );
        kv("model.lambda_tl", self.lambda_tl.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.steps_per_epoch", self.steps_per_epoch.to_string());
        kv("train.batch_p", self.batch_p.to_string());
        kv("train.batch_k", self.batch_k.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.beta1", self.beta1.to_string());
        kv("train.beta2", self.beta2.to_string());
        kv("train.epsilon", self.epsilon.to_string());
        kv("train.decay_start", self.decay_start.to_string());
        kv("train.decay_factor", self.decay_factor.to_string());
        kv("train.decay_span", self.decay_span.to_string());
        kv(
            "eval.mode",
            if self.eval_mode_multi {
                "multi"
            } else {
                "single"
            }
            .to_string(),
        );
        kv("eval.cross_camera", self.cross_camera.to_string());
        kv("eval.cmc_max_rank", self.cmc_max_rank.to_string());
        kv("eval.fscore_cutoff", self.fscore_cutoff.to_string());
        kv(
            "eval.multi_pool",
            if self.multi_pool_max {
                "max"
            } else {
                "average"
            }
            .to_string(),
        );
        out
    }

    pub fn conv_stages(&self) -> Result<Vec<ConvStage>> {
        if self.conv_widths.len() != self.conv_strides.len() {
            return Err(bad(format!(
                "model.conv_widths has {} entries but model.conv_strides has {}",
                self.conv_widths.len(),
                self.conv_strides.len()
            )));
        }
        Ok(self
            .conv_widths
            .iter()
            .zip(self.conv_strides.iter())
            .map(|(&width, &stride)| ConvStage { width, stride })
            .collect())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            decay_start: self.decay_start,
            decay_factor: self.decay_factor,
            decay_span: if self.decay_span == 0 {
                self.epochs.saturating_sub(self.decay_start).max(1)
            } else {
                self.decay_span
            },
        }
    }
}
