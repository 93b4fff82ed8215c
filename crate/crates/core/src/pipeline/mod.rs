//! Desk-scale trainable model: optional conv stages, a 1x1 channel
//! reduction, subspace (or channel-average) pooling, and a linear
//! classifier, with a hand-written backward pass through every stage.

pub mod conv;
pub mod optim;
pub mod train;

pub use optim::{adam_step, lr_at_epoch, AdamConfig, AdamState};
pub use train::{descriptors, train, EpochLog, TrainItem, TrainOpts, TrainOutput};

use crate::data::Tensor;
use crate::error::{Error, Result};
use crate::losses::Reduction;
use crate::numerics::{matmul, Matrix};
use crate::pooling::{
    flatten, pool_backward, pool_forward, unflatten, FeatureMap, PoolCache, SubspaceDescriptor,
};
use crate::rng::Rng;
use conv::{conv_backward, conv_forward, relu, Shape3, KERNEL};
use std::fs;
use std::path::Path;

/// Magnitude of the Gaussian jitter added to a reduced feature map when its
/// numerical rank drops below the pooling rank during training.
pub const JITTER_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Softmax cross-entropy over identities.
    Id,
    /// Batch-hard triplet loss on descriptors.
    Tl,
    /// Both, combined as `loss_id + lambda * loss_tl`.
    IdTl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    /// Truncated-SVD subspace pooling (descriptor length `d * k`).
    Subspace,
    /// Per-channel spatial mean (descriptor length `d`), the baseline.
    ChannelAverage,
}

/// Descriptor metric used at retrieval time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorMetric {
    FlattenedEuclidean,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStage {
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Conv stages ahead of the reduction; empty means the inputs are
    /// precomputed feature maps consumed directly (ingestion mode).
    pub conv_stages: Vec<ConvStage>,
    /// Output channels of the 1x1 reduction.
    pub reduce_dim: usize,
    /// Pooling rank k (ignored by channel-average pooling).
    pub pool_rank: usize,
    pub pooling: PoolingMode,
    /// Number of identity classes T for the classifier.
    pub num_ids: usize,
    pub loss_mode: LossMode,
    pub margin: f64,
    pub reduction: Reduction,
    pub metric: DescriptorMetric,
    /// Weight of the triplet term in `IdTl` mode.
    pub lambda_tl: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            input_height: 32,
            input_width: 64,
            conv_stages: vec![
                ConvStage {
                    width: 16,
                    stride: 2,
                },
                ConvStage {
                    width: 32,
                    stride: 2,
                },
                ConvStage {
                    width: 64,
                    stride: 2,
                },
            ],
            reduce_dim: 16,
            pool_rank: 4,
            pooling: PoolingMode::Subspace,
            num_ids: 10,
            loss_mode: LossMode::IdTl,
            margin: 0.3,
            reduction: Reduction::Mean,
            metric: DescriptorMetric::FlattenedEuclidean,
            lambda_tl: 1.0,
        }
    }
}

impl ModelConfig {
    /// Shape of the feature map entering the 1x1 reduction.
    pub fn feature_shape(&self) -> Shape3 {
        let mut shape = Shape3 {
            channels: self.input_channels,
            height: self.input_height,
            width: self.input_width,
        };
        for stage in &self.conv_stages {
            shape = shape.conv_output(stage.width, stage.stride);
        }
        shape
    }

    /// Length of the flat descriptor vector.
    pub fn descriptor_len(&self) -> usize {
        match self.pooling {
            PoolingMode::Subspace => self.reduce_dim * self.pool_rank,
            PoolingMode::ChannelAverage => self.reduce_dim,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::InvalidConfig {
                detail: "input dimensions must be positive".to_string(),
            });
        }
        for (i, stage) in self.conv_stages.iter().enumerate() {
            if stage.width == 0 || stage.stride == 0 {
                return Err(Error::InvalidConfig {
                    detail: format!("conv stage {i} must have positive width and stride"),
                });
            }
        }
        let feat = self.feature_shape();
        if self.reduce_dim == 0 || self.reduce_dim > feat.channels {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "reduce_dim {} must be in 1..={} (feature channels)",
                    self.reduce_dim, feat.channels
                ),
            });
        }
        let locations = feat.height * feat.width;
        if let PoolingMode::Subspace = self.pooling {
            if self.pool_rank == 0 || self.pool_rank > self.reduce_dim.min(locations) {
                return Err(Error::InvalidConfig {
                    detail: format!(
                        "pool_rank {} must be in 1..={} (min of reduced channels and locations)",
                        self.pool_rank,
                        self.reduce_dim.min(locations)
                    ),
                });
            }
        }
        if self.num_ids < 2 {
            return Err(Error::InvalidConfig {
                detail: format!("num_ids must be at least 2, got {}", self.num_ids),
            });
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::InvalidConfig {
                detail: format!("margin must be non-negative, got {}", self.margin),
            });
        }
        if !self.lambda_tl.is_finite() {
            return Err(Error::InvalidConfig {
                detail: "lambda_tl must be finite".to_string(),
            });
        }
        Ok(())
    }
}

/// One named parameter tensor with its gradient buffer and a per-parameter
/// learning-rate multiplier (0 freezes it).
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub lr_scale: f64,
}

/// Ordered collection of parameters; iteration order is creation order and
/// is part of the determinism contract.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    /// Seeded initialization: weights uniform in [-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)], biases zero.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> ParamStore {
        let mut params = Vec::new();
        let mut shape = Shape3 {
            channels: cfg.input_channels,
            height: cfg.input_height,
            width: cfg.input_width,
        };
        for (i, stage) in cfg.conv_stages.iter().enumerate() {
            let fan_in = shape.channels * KERNEL * KERNEL;
            let limit = (1.0 / fan_in as f64).sqrt();
            params.push(Param::random(
                &format!("conv{i}.weight"),
                vec![stage.width, shape.channels, KERNEL, KERNEL],
                limit,
                rng,
            ));
            params.push(Param::zeros(&format!("conv{i}.bias"), vec![stage.width]));
            shape = shape.conv_output(stage.width, stage.stride);
        }
        let limit = (1.0 / shape.channels as f64).sqrt();
        params.push(Param::random(
            "reduce.weight",
            vec![cfg.reduce_dim, shape.channels],
            limit,
            rng,
        ));
        params.push(Param::zeros("reduce.bias", vec![cfg.reduce_dim]));
        let d_desc = cfg.descriptor_len();
        let limit = (1.0 / d_desc as f64).sqrt();
        params.push(Param::random(
            "classifier.weight",
            vec![cfg.num_ids, d_desc],
            limit,
            rng,
        ));
        params.push(Param::zeros("classifier.bias", vec![cfg.num_ids]));
        ParamStore { params }
    }

    pub fn from_params(params: Vec<Param>) -> ParamStore {
        ParamStore { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> &Param {
        self.params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter \"{name}\""))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter \"{name}\""))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = 0.0;
            }
        }
    }

    /// Freeze or rescale every parameter whose name starts with `prefix`.
    pub fn set_lr_scale(&mut self, prefix: &str, scale: f64) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.lr_scale = scale;
            }
        }
    }

    /// All parameter values as one flat vector (finite-difference probes).
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut offset = 0;
        for p in &mut self.params {
            let len = p.value.len();
            p.value.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, values.len());
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }
}

impl Param {
    fn random(name: &str, shape: Vec<usize>, limit: f64, rng: &mut Rng) -> Param {
        let len: usize = shape.iter().product();
        Param {
            name: name.to_string(),
            shape,
            value: (0..len).map(|_| rng.uniform_symmetric(limit)).collect(),
            grad: vec![0.0; len],
            lr_scale: 1.0,
        }
    }

    fn zeros(name: &str, shape: Vec<usize>) -> Param {
        let len: usize = shape.iter().product();
        Param {
            name: name.to_string(),
            shape,
            value: vec![0.0; len],
            grad: vec![0.0; len],
            lr_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct StageCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    in_shape: Shape3,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum PoolState {
    Subspace {
        descriptor: SubspaceDescriptor,
        cache: PoolCache,
    },
    Average {
        locations: usize,
    },
}

/// Everything the backward pass needs, plus the per-image feature maps and
/// descriptors for inspection.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    stage_caches: Vec<Vec<StageCache>>,
    /// Feature map entering the reduction, per image.
    pub feature_maps: Vec<FeatureMap>,
    /// Reduced map (the pooling input), per image.
    pub reduced: Vec<Matrix>,
    pool: Vec<PoolState>,
    /// Flat descriptor per image, stacked N x descriptor_len.
    pub flat: Matrix,
    /// Classifier outputs, N x T.
    pub logits: Matrix,
    /// Times the rank-deficiency jitter fired during this pass.
    pub jitter_events: usize,
}

impl ForwardPass {
    /// The pooled subspace descriptor of one image; `None` under
    /// channel-average pooling.
    pub fn descriptor(&self, image: usize) -> Option<&SubspaceDescriptor> {
        match &self.pool[image] {
            PoolState::Subspace { descriptor, .. } => Some(descriptor),
            PoolState::Average { .. } => None,
        }
    }
}

/// Run the model over a batch of images (flat channel-major vectors).
///
/// `jitter_rng`: when given (training), a reduced map whose numerical rank
/// falls below the pooling rank is retried with tiny Gaussian jitter; when
/// absent (evaluation, gradient checks) the rank error propagates.
pub fn forward(
    cfg: &ModelConfig,
    store: &ParamStore,
    images: &[Vec<f64>],
    mut jitter_rng: Option<&mut Rng>,
) -> Result<ForwardPass> {
    if images.is_empty() {
        return Err(Error::InvalidConfig {
            detail: "empty batch".to_string(),
        });
    }
    let expected = cfg.input_len();
    let n = images.len();
    let feat_shape = cfg.feature_shape();
    let locations = feat_shape.height * feat_shape.width;
    let d_desc = cfg.descriptor_len();

    let mut stage_caches = Vec::with_capacity(n);
    let mut feature_maps = Vec::with_capacity(n);
    let mut reduced = Vec::with_capacity(n);
    let mut pool_states = Vec::with_capacity(n);
    let mut flat = Matrix::zeros(n, d_desc);
    let mut jitter_events = 0usize;

    let w_r = store.get("reduce.weight");
    let b_r = store.get("reduce.bias");

    for (img_idx, image) in images.iter().enumerate() {
        if image.len() != expected {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "image {img_idx} has {} values, config expects {expected}",
                    image.len()
                ),
            });
        }
        // Conv stages.
        let mut caches = Vec::with_capacity(cfg.conv_stages.len());
        let mut x = image.clone();
        let mut shape = Shape3 {
            channels: cfg.input_channels,
            height: cfg.input_height,
            width: cfg.input_width,
        };
        for (i, stage) in cfg.conv_stages.iter().enumerate() {
            let w = store.get(&format!("conv{i}.weight"));
            let b = store.get(&format!("conv{i}.bias"));
            let pre = conv_forward(&x, shape, &w.value, &b.value, stage.width, stage.stride);
            let out = relu(&pre);
            caches.push(StageCache {
                input: x,
                pre,
                in_shape: shape,
            });
            shape = shape.conv_output(stage.width, stage.stride);
            x = out;
        }
        debug_assert_eq!(shape, feat_shape);

        // Feature map as a matrix: one row per channel, one column per
        // location.
        let a = Matrix::from_vec(feat_shape.channels, locations, x)?;
        let fm = FeatureMap::new(feat_shape.channels, feat_shape.height, feat_shape.width, a)?;

        // 1x1 reduction: B = W A + b.
        let w_mat = Matrix::from_vec(cfg.reduce_dim, feat_shape.channels, w_r.value.clone())?;
        let mut b_mat = matmul(&w_mat, fm.matrix())?;
        for ch in 0..cfg.reduce_dim {
            for loc in 0..locations {
                b_mat[(ch, loc)] += b_r.value[ch];
            }
        }

        match cfg.pooling {
            PoolingMode::Subspace => {
                let mut current = b_mat;
                let mut attempts = 0;
                let (desc, cache) = loop {
                    let fm_b = FeatureMap::new(
                        cfg.reduce_dim,
                        feat_shape.height,
                        feat_shape.width,
                        current.clone(),
                    )?;
                    match pool_forward(&fm_b, cfg.pool_rank) {
                        Ok(out) => break out,
                        Err(Error::RankDeficient { .. })
                            if jitter_rng.is_some() && attempts < 3 =>
                        {
                            let rng = jitter_rng.as_deref_mut().expect("checked above");
                            for v in current.data_mut() {
                                *v += JITTER_SCALE * rng.normal();
                            }
                            attempts += 1;
                            jitter_events += 1;
                        }
                        Err(e) => return Err(e),
                    }
                };
                let flat_desc = flatten(&desc);
                for (j, &v) in flat_desc.iter().enumerate() {
                    flat[(img_idx, j)] = v;
                }
                reduced.push(current);
                pool_states.push(PoolState::Subspace {
                    descriptor: desc,
                    cache,
                });
            }
            PoolingMode::ChannelAverage => {
                let inv = 1.0 / locations as f64;
                for ch in 0..cfg.reduce_dim {
                    let mean: f64 = (0..locations).map(|loc| b_mat[(ch, loc)]).sum::<f64>() * inv;
                    flat[(img_idx, ch)] = mean;
                }
                reduced.push(b_mat);
                pool_states.push(PoolState::Average { locations });
            }
        }
        stage_caches.push(caches);
        feature_maps.push(fm);
    }

    // Classifier: logits = flat W_c^T + b_c.
    let w_c = store.get("classifier.weight");
    let b_c = store.get("classifier.bias");
    let w_c_mat = Matrix::from_vec(cfg.num_ids, d_desc, w_c.value.clone())?;
    let mut logits = matmul(&flat, &w_c_mat.transpose())?;
    for i in 0..n {
        for t in 0..cfg.num_ids {
            logits[(i, t)] += b_c.value[t];
        }
    }

    Ok(ForwardPass {
        stage_caches,
        feature_maps,
        reduced,
        pool: pool_states,
        flat,
        logits,
        jitter_events,
    })
}

/// Accumulate parameter gradients for a finished forward pass.
///
/// `d_logits` is the loss gradient on the classifier outputs (N x T) and
/// `d_flat` any loss gradient applied directly to the descriptors (N x
/// descriptor_len); either may be all zeros.
pub fn backward(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    pass: &ForwardPass,
    d_logits: &Matrix,
    d_flat: &Matrix,
) -> Result<()> {
    let n = pass.flat.rows();
    let d_desc = cfg.descriptor_len();
    if d_logits.rows() != n || d_logits.cols() != cfg.num_ids {
        return Err(Error::ShapeMismatch {
            context: format!(
                "d_logits {}x{}, expected {n}x{}",
                d_logits.rows(),
                d_logits.cols(),
                cfg.num_ids
            ),
        });
    }
    if d_flat.rows() != n || d_flat.cols() != d_desc {
        return Err(Error::ShapeMismatch {
            context: format!(
                "d_flat {}x{}, expected {n}x{d_desc}",
                d_flat.rows(),
                d_flat.cols()
            ),
        });
    }
    let feat_shape = cfg.feature_shape();
    let locations = feat_shape.height * feat_shape.width;

    // Classifier gradients.
    let w_c_mat = {
        let w_c = store.get("classifier.weight");
        Matrix::from_vec(cfg.num_ids, d_desc, w_c.value.clone())?
    };
    let d_wc = matmul(&d_logits.transpose(), &pass.flat)?;
    {
        let p = store.get_mut("classifier.weight");
        for (g, &d) in p.grad.iter_mut().zip(d_wc.data().iter()) {
            *g += d;
        }
        let p = store.get_mut("classifier.bias");
        for t in 0..cfg.num_ids {
            for i in 0..n {
                p.grad[t] += d_logits[(i, t)];
            }
        }
    }
    // Total descriptor gradient: direct + through the classifier.
    let d_flat_total = d_flat.add(&matmul(d_logits, &w_c_mat)?)?;

    let w_r_mat = {
        let w_r = store.get("reduce.weight");
        Matrix::from_vec(cfg.reduce_dim, feat_shape.channels, w_r.value.clone())?
    };

    for img_idx in 0..n {
        // Descriptor gradient back through the pooling.
        let d_b = match &pass.pool[img_idx] {
            PoolState::Subspace { cache, .. } => {
                let d_u = unflatten(d_flat_total.row(img_idx), cfg.reduce_dim, cfg.pool_rank)?;
                pool_backward(cache, &d_u)?
            }
            PoolState::Average { locations } => {
                let inv = 1.0 / *locations as f64;
                let row = d_flat_total.row(img_idx);
                Matrix::from_fn(cfg.reduce_dim, *locations, |ch, _| row[ch] * inv)
            }
        };

        // 1x1 reduction gradients: dW += dB A^T, db += row sums, dA = W^T dB.
        let a = pass.feature_maps[img_idx].matrix();
        let d_wr = matmul(&d_b, &a.transpose())?;
        {
            let p = store.get_mut("reduce.weight");
            for (g, &d) in p.grad.iter_mut().zip(d_wr.data().iter()) {
                *g += d;
            }
            let p = store.get_mut("reduce.bias");
            for ch in 0..cfg.reduce_dim {
                for loc in 0..locations {
                    p.grad[ch] += d_b[(ch, loc)];
                }
            }
        }
        let d_a = matmul(&w_r_mat.transpose(), &d_b)?;

        // Conv chain, last stage first.
        let mut d_x: Vec<f64> = d_a.data().to_vec();
        for (i, stage) in cfg.conv_stages.iter().enumerate().rev() {
            let cache = &pass.stage_caches[img_idx][i];
            let (w_snapshot, mut d_w, mut d_bias) = {
                let w = store.get(&format!("conv{i}.weight"));
                (
                    w.value.clone(),
                    vec![0.0; w.value.len()],
                    vec![0.0; stage.width],
                )
            };
            let d_in = conv_backward(
                &cache.input,
                cache.in_shape,
                &w_snapshot,
                &cache.pre,
                &d_x,
                stage.width,
                stage.stride,
                &mut d_w,
                &mut d_bias,
            );
            {
                let p = store.get_mut(&format!("conv{i}.weight"));
                for (g, &d) in p.grad.iter_mut().zip(d_w.iter()) {
                    *g += d;
                }
                let p = store.get_mut(&format!("conv{i}.bias"));
                for (g, &d) in p.grad.iter_mut().zip(d_bias.iter()) {
                    *g += d;
                }
            }
            d_x = d_in;
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"SPCK";
const CHECKPOINT_VERSION: u8 = 1;

/// Serialize named tensors into the checkpoint container: a header plus one
/// length-prefixed tensor record per entry.
pub fn checkpoint_to_bytes(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig {
                detail: format!("checkpoint entry name too long: {name}"),
            });
        }
        let record = crate::data::tensor_to_bytes(tensor)?;
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(record.len() as u32).to_le_bytes());
        out.extend_from_slice(&record);
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let fail = |detail: String| Error::Format { detail };
    if bytes.len() < 9 {
        return Err(fail(format!(
            "checkpoint header needs 9 bytes, found {}",
            bytes.len()
        )));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad checkpoint magic, expected \"SPCK\"".to_string()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported checkpoint version {}", bytes[4])));
    }
    let count = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let mut entries = Vec::with_capacity(count);
    let mut off = 9usize;
    for i in 0..count {
        if off + 2 > bytes.len() {
            return Err(fail(format!("truncated name length in entry {i}")));
        }
        let name_len = u16::from_le_bytes([bytes[off], bytes[off + 1]]) as usize;
        off += 2;
        if off + name_len > bytes.len() {
            return Err(fail(format!("truncated name in entry {i}")));
        }
        let name = String::from_utf8(bytes[off..off + name_len].to_vec())
            .map_err(|_| fail(format!("entry {i}: name is not UTF-8")))?;
        off += name_len;
        if off + 4 > bytes.len() {
            return Err(fail(format!("truncated record length in entry {i}")));
        }
        let record_len =
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
                as usize;
        off += 4;
        if off + record_len > bytes.len() {
            return Err(fail(format!("truncated tensor record in entry {i}")));
        }
        let tensor = crate::data::tensor_from_bytes(&bytes[off..off + record_len])?;
        off += record_len;
        entries.push((name, tensor));
    }
    if off != bytes.len() {
        return Err(fail(format!(
            "trailing bytes after {count} checkpoint entries"
        )));
    }
    Ok(entries)
}

/// Write parameters (and optionally optimizer moments) as a checkpoint
/// file. Values are stored as 32-bit floats, the container's on-disk dtype.
pub fn save_checkpoint(path: &Path, store: &ParamStore, adam: Option<&AdamState>) -> Result<()> {
    let mut entries = Vec::new();
    for p in store.params() {
        entries.push((
            p.name.clone(),
            Tensor::new(p.shape.clone(), p.value.iter().map(|&x| x as f32).collect())?,
        ));
    }
    if let Some(state) = adam {
        entries.push((
            "adam.step".to_string(),
            Tensor::new(vec![1], vec![state.step as f32])?,
        ));
        for (idx, p) in store.params().iter().enumerate() {
            entries.push((
                format!("adam.m.{}", p.name),
                Tensor::new(
                    p.shape.clone(),
                    state.m[idx].iter().map(|&x| x as f32).collect(),
                )?,
            ));
            entries.push((
                format!("adam.v.{}", p.name),
                Tensor::new(
                    p.shape.clone(),
                    state.v[idx].iter().map(|&x| x as f32).collect(),
                )?,
            ));
        }
    }
    let bytes = checkpoint_to_bytes(&entries)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::Io {
        detail: format!("writing {}: {e}", tmp.display()),
    })?;
    fs::rename(&tmp, path).map_err(|e| Error::Io {
        detail: format!("renaming into {}: {e}", path.display()),
    })?;
    Ok(())
}

/// Load checkpoint parameter values into a freshly initialized store.
/// Entry names and shapes must match the store exactly; optimizer entries
/// are ignored.
pub fn load_checkpoint_into(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        detail: format!("reading {}: {e}", path.display()),
    })?;
    let entries = checkpoint_from_bytes(&bytes)?;
    for p in store.params_mut() {
        let found = entries
            .iter()
            .find(|(name, _)| *name == p.name)
            .ok_or_else(|| Error::Format {
                detail: format!("checkpoint is missing parameter \"{}\"", p.name),
            })?;
        if found.1.dims != p.shape {
            return Err(Error::Format {
                detail: format!(
                    "checkpoint parameter \"{}\" has shape {:?}, expected {:?}",
                    p.name, found.1.dims, p.shape
                ),
            });
        }
        for (v, &x) in p.value.iter_mut().zip(found.1.data.iter()) {
            *v = x as f64;
        }
    }
    Ok(())
}
