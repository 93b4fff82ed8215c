//! Shared test oracles, independent of the library's implementation paths.

// Each integration target compiles this module separately and uses a
// different subset of it.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use subpool_core::numerics::Matrix;
use subpool_core::rng::Rng;

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Eigenvalues of a symmetric matrix by classical two-sided Jacobi,
/// descending. Independent oracle for `svd` (singular values squared are
/// the eigenvalues of `A A^T`).
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut b: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let scale: f64 = b
        .iter()
        .flat_map(|row| row.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += b[p][q] * b[p][q];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                if b[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (b[q][q] - b[p][p]) / (2.0 * b[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // B <- J^T B J on rows/columns p, q.
                for i in 0..n {
                    let bip = b[i][p];
                    let biq = b[i][q];
                    b[i][p] = c * bip - s * biq;
                    b[i][q] = s * bip + c * biq;
                }
                for j in 0..n {
                    let bpj = b[p][j];
                    let bqj = b[q][j];
                    b[p][j] = c * bpj - s * bqj;
                    b[q][j] = s * bpj + c * bqj;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| b[i][i]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// A minimal sample mirror for the brute-force evaluation oracle.
#[derive(Clone)]
pub struct OracleSample {
    pub descriptor: Vec<f64>,
    pub person_id: i64,
    pub camera_id: i64,
}

pub struct OracleReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub f_score: f64,
    pub num_queries: usize,
    pub num_skipped: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force re-implementation of the whole evaluation pipeline:
/// optional multi-query average pooling, cross-camera filtering, junk
/// removal, uninterpolated AP, first-hit CMC, and F-score at a cutoff.
pub fn naive_evaluate(
    queries: &[OracleSample],
    gallery: &[OracleSample],
    multi_query: bool,
    cross_camera: bool,
    max_rank: usize,
    cutoff: usize,
) -> OracleReport {
    let effective: Vec<OracleSample> = if multi_query {
        let mut groups: Vec<((i64, i64), Vec<&OracleSample>)> = Vec::new();
        for q in queries {
            let key = (q.person_id, q.camera_id);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(q),
                None => groups.push((key, vec![q])),
            }
        }
        groups
            .into_iter()
            .map(|((id, cam), members)| {
                let dim = members[0].descriptor.len();
                let mut pooled = members[0].descriptor.clone();
                for m in members.iter().skip(1) {
                    for i in 0..dim {
                        pooled[i] += m.descriptor[i];
                    }
                }
                let inv = 1.0 / members.len() as f64;
                for x in pooled.iter_mut() {
                    *x *= inv;
                }
                OracleSample {
                    descriptor: pooled,
                    person_id: id,
                    camera_id: cam,
                }
            })
            .collect()
    } else {
        queries.to_vec()
    };

    let mut aps = Vec::new();
    let mut first_hits: Vec<Option<usize>> = Vec::new();
    let mut f_scores = Vec::new();
    let mut skipped = 0usize;
    for q in &effective {
        // Rank with explicit (distance, index) sort; drop junk afterwards.
        let mut ranked: Vec<(usize, f64)> = gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                !(cross_camera && g.person_id == q.person_id && g.camera_id == q.camera_id)
            })
            .map(|(gi, g)| (gi, euclidean(&q.descriptor, &g.descriptor)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let flags: Vec<bool> = ranked
            .iter()
            .filter(|(gi, _)| gallery[*gi].person_id >= 0)
            .map(|(gi, _)| gallery[*gi].person_id == q.person_id)
            .collect();
        let total: usize = flags.iter().filter(|&&x| x).count();
        if total == 0 {
            skipped += 1;
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &rel) in flags.iter().enumerate() {
            if rel {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        aps.push(ap / total as f64);
        first_hits.push(flags.iter().position(|&x| x));
        let hits_at = flags.iter().take(cutoff).filter(|&&x| x).count();
        let precision = hits_at as f64 / cutoff as f64;
        let recall = hits_at as f64 / total as f64;
        f_scores.push(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        });
    }
    let n = aps.len();
    let map = aps.iter().sum::<f64>() / n as f64;
    let mut cmc = vec![0.0; max_rank];
    for pos in first_hits.iter().flatten() {
        for (r, slot) in cmc.iter_mut().enumerate() {
            if *pos <= r {
                *slot += 1.0;
            }
        }
    }
    for slot in cmc.iter_mut() {
        *slot /= n as f64;
    }
    let f_score = f_scores.iter().sum::<f64>() / n as f64;
    OracleReport {
        map,
        cmc,
        f_score,
        num_queries: n,
        num_skipped: skipped,
    }
}
