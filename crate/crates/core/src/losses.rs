//! Training objectives: softmax cross-entropy over identities and the
//! batch-hard triplet loss on P x K batches, both with analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Stabilizer added under the square root of every pairwise distance so the
/// gradient stays finite when two embeddings coincide.
pub const DISTANCE_STABILIZER: f64 = 1e-16;

/// Embeddings with identity labels, for classification-style losses.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledBatch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<LabeledBatch> {
        if labels.len() != embeddings.rows() {
            return Err(Error::BatchStructure {
                detail: format!(
                    "{} labels for {} embeddings",
                    labels.len(),
                    embeddings.rows()
                ),
            });
        }
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite {
                context: "labeled batch embeddings".to_string(),
            });
        }
        Ok(LabeledBatch {
            embeddings,
            labels,
            num_classes,
        })
    }
}

/// A P-identities x K-instances batch for the triplet loss.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    pub num_ids: usize,
    pub instances_per_id: usize,
    pub margin: f64,
}

impl TripletBatch {
    /// Validates the P x K structure: at least two identities, every identity
    /// with exactly the same instance count, and that count at least two
    /// (an identity with a single instance has no positive pair).
    pub fn new(embeddings: Matrix, labels: Vec<usize>, margin: f64) -> Result<TripletBatch> {
        if labels.len() != embeddings.rows() {
            return Err(Error::BatchStructure {
                detail: format!(
                    "{} labels for {} embeddings",
                    labels.len(),
                    embeddings.rows()
                ),
            });
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite {
                context: "triplet batch embeddings".to_string(),
            });
        }
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::InvalidConfig {
                detail: format!("triplet margin must be non-negative, got {margin}"),
            });
        }
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &y in &labels {
            match counts.iter_mut().find(|(label, _)| *label == y) {
                Some((_, c)) => *c += 1,
                None => counts.push((y, 1)),
            }
        }
        let num_ids = counts.len();
        if num_ids < 2 {
            return Err(Error::BatchStructure {
                detail: format!("need at least 2 identities, got {num_ids}"),
            });
        }
        let instances_per_id = counts[0].1;
        for &(label, c) in &counts {
            if c != instances_per_id {
                return Err(Error::BatchStructure {
                    detail: format!(
                        "identity {label} has {c} instances, expected {instances_per_id}"
                    ),
                });
            }
        }
        if instances_per_id < 2 {
            return Err(Error::BatchStructure {
                detail: format!("each identity needs at least 2 instances, got {instances_per_id}"),
            });
        }
        Ok(TripletBatch {
            embeddings,
            labels,
            num_ids,
            instances_per_id,
            margin,
        })
    }
}

/// How per-anchor triplet terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Plain double sum over identities and instances.
    Sum,
    /// Sum divided by P*K, so the loss scale is batch-size independent.
    Mean,
}

/// A scalar loss with the gradient matching the input shape.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    pub grad: Matrix,
}

/// Mean softmax cross-entropy:
/// `-(1/N) * sum_i log softmax(logits_i)[y_i]`, stabilized by row-max
/// subtraction. The gradient is `(1/N) * (softmax - onehot)`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossResult> {
    let n = logits.rows();
    let t = logits.cols();
    if labels.len() != n {
        return Err(Error::BatchStructure {
            detail: format!("{} labels for {} logit rows", labels.len(), n),
        });
    }
    for &y in labels {
        if y >= t {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: t,
            });
        }
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite {
            context: "logits".to_string(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, t);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let row_max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &x in row {
            z += (x - row_max).exp();
        }
        loss += z.ln() + row_max - row[labels[i]];
        for j in 0..t {
            grad[(i, j)] = (row[j] - row_max).exp() / z * inv_n;
        }
        grad[(i, labels[i])] -= inv_n;
    }
    Ok(LossResult {
        loss: loss * inv_n,
        grad,
    })
}

/// All-pairs Euclidean distances with a stabilized square root:
/// `D_ij = sqrt(max(0, |a|^2 + |b|^2 - 2 a.b) + 1e-16)` off the diagonal,
/// exactly zero on it.
pub fn pairwise_distances(embeddings: &Matrix) -> Matrix {
    let n = embeddings.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| embeddings.row(i).iter().map(|x| x * x).sum())
        .collect();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j).iter())
                .map(|(&a, &b)| a * b)
                .sum();
            let sq = (norms[i] + norms[j] - 2.0 * dot).max(0.0);
            let dist = (sq + DISTANCE_STABILIZER).sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Batch-hard triplet loss: per anchor, the hardest (farthest) positive and
/// hardest (closest) negative form the triplet and
/// `max(0, D_ap - D_an + margin)` is accumulated. Ties in the hardest
/// selection break toward the lowest index; the gradient flows only through
/// the selected pair of each active anchor.
pub fn batch_hard_triplet(batch: &TripletBatch, reduction: Reduction) -> LossResult {
    let e = &batch.embeddings;
    let n = e.rows();
    let dim = e.cols();
    let d = pairwise_distances(e);
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, dim);
    for a in 0..n {
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            if batch.labels[j] == batch.labels[a] {
                if hardest_pos.is_none_or(|p| d[(a, j)] > d[(a, p)]) {
                    hardest_pos = Some(j);
                }
            } else if hardest_neg.is_none_or(|q| d[(a, j)] < d[(a, q)]) {
                hardest_neg = Some(j);
            }
        }
        // Batch invariants guarantee both exist.
        let p = hardest_pos.expect("positive exists");
        let q = hardest_neg.expect("negative exists");
        let term = d[(a, p)] - d[(a, q)] + batch.margin;
        if term <= 0.0 {
            continue;
        }
        loss += term;
        // d D(a,b) / d x_a = (x_a - x_b) / D(a,b); the stabilizer keeps the
        // denominator positive.
        for col in 0..dim {
            let diff_p = (e[(a, col)] - e[(p, col)]) / d[(a, p)];
            let diff_q = (e[(a, col)] - e[(q, col)]) / d[(a, q)];
            grad[(a, col)] += diff_p - diff_q;
            grad[(p, col)] -= diff_p;
            grad[(q, col)] += diff_q;
        }
    }
    if let Reduction::Mean = reduction {
        let inv = 1.0 / n as f64;
        loss *= inv;
        for g in grad.data_mut() {
            *g *= inv;
        }
    }
    LossResult { loss, grad }
}
