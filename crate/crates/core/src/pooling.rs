//! Subspace pooling: a feature map `A` (channels x locations) is replaced by
//! the orthonormal basis of its top-k left-singular subspace.
//!
//! The forward pass truncates the SVD and canonicalizes column signs so the
//! map is a deterministic function. The backward pass propagates upstream
//! gradients through the truncated SVD analytically, with a Lorentzian
//! broadening of the singular-value coupling so near-degenerate spectra stay
//! finite.

use crate::error::{Error, Result};
use crate::numerics::{frobenius_norm, matmul, svd, Matrix, SvdFactors};

/// Relative threshold below which a retained singular value counts as zero
/// when deciding the numerical rank.
pub const RANK_TOL: f64 = 1e-12;

/// Broadening scale for the singular-value coupling in the backward pass:
/// `eps = BROADENING * sigma_1^4`.
pub const BROADENING: f64 = 1e-10;

/// A convolutional feature map viewed as the matrix `A` with one row per
/// channel and one column per spatial location.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    a: Matrix,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, a: Matrix) -> Result<FeatureMap> {
        if a.rows() != channels || a.cols() != height * width {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "feature map {}x{} does not match channels={channels}, h*w={}",
                    a.rows(),
                    a.cols(),
                    height * width
                ),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite {
                context: "feature map".to_string(),
            });
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            a,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

/// The pooled representation: k sign-canonical orthonormal columns spanning
/// the dominant left-singular subspace of the feature map.
#[derive(Debug, Clone)]
pub struct SubspaceDescriptor {
    pub k: usize,
    /// `channels x k`, orthonormal columns.
    pub u_k: Matrix,
    /// The k retained singular values (diagnostic only).
    pub sigma_k: Vec<f64>,
}

/// Everything the backward pass needs to differentiate through the pooling:
/// the full SVD of the input, the truncation rank, the applied sign flips,
/// and the original dimensions.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub factors: SvdFactors,
    pub k: usize,
    pub signs: Vec<f64>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Scale each column by +/-1 so its largest-magnitude entry is non-negative.
/// Ties are broken by the lowest row index. Returns the flipped matrix and
/// the per-column signs that were applied.
pub fn canonicalize_signs(u: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = u.clone();
    let mut signs = Vec::with_capacity(u.cols());
    for j in 0..u.cols() {
        let mut pivot = 0.0f64;
        for i in 0..u.rows() {
            if u[(i, j)].abs() > pivot.abs() {
                pivot = u[(i, j)];
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            for i in 0..u.rows() {
                out[(i, j)] = -out[(i, j)];
            }
        }
        signs.push(sign);
    }
    (out, signs)
}

/// Pool a feature map down to its rank-k left-singular basis.
///
/// Errors if k exceeds min(channels, locations) or if the numerical rank of
/// the map is below k (the subspace would be undefined).
pub fn pool_forward(fm: &FeatureMap, k: usize) -> Result<(SubspaceDescriptor, PoolCache)> {
    let c = fm.channels;
    let hw = fm.height * fm.width;
    let max_rank = c.min(hw);
    if k == 0 || k > max_rank {
        return Err(Error::RankTooLarge {
            requested: k,
            max: max_rank,
        });
    }
    let factors = svd(&fm.a)?;
    let sigma_1 = factors.s[0];
    if factors.s[k - 1] <= RANK_TOL * sigma_1 {
        let numerical_rank = factors
            .s
            .iter()
            .take_while(|&&s| s > RANK_TOL * sigma_1)
            .count();
        return Err(Error::RankDeficient {
            requested: k,
            numerical_rank,
        });
    }
    let u_k_raw = Matrix::from_fn(c, k, |i, j| factors.u[(i, j)]);
    let (u_k, signs) = canonicalize_signs(&u_k_raw);
    let descriptor = SubspaceDescriptor {
        k,
        u_k,
        sigma_k: factors.s[..k].to_vec(),
    };
    let cache = PoolCache {
        factors,
        k,
        signs,
        channels: c,
        height: fm.height,
        width: fm.width,
    };
    Ok((descriptor, cache))
}

/// Gradient of the pooled output with respect to the input feature map.
///
/// `d_u` is the upstream gradient on the sign-canonical descriptor
/// (`channels x k`). Returns `dL/dA` (`channels x locations`).
///
/// With `U, S, V` the thin SVD and `Ubar` the upstream gradient (flipped
/// back to raw sign convention and zero-padded to `channels x r`):
///
/// ```text
/// dA = U (F o (U^T Ubar - Ubar^T U)) S V^T + (I - U U^T) Ubar S^-1 V^T
/// F_ij = (s_j^2 - s_i^2) / ((s_j^2 - s_i^2)^2 + eps),   F_ii = 0
/// ```
///
/// The Lorentzian denominator (`eps = 1e-10 * s_1^4`) keeps the coupling
/// finite when retained singular values nearly collide.
pub fn pool_backward(cache: &PoolCache, d_u: &Matrix) -> Result<Matrix> {
    let c = cache.channels;
    let hw = cache.height * cache.width;
    let r = cache.factors.s.len();
    let k = cache.k;
    if d_u.rows() != c || d_u.cols() != k {
        return Err(Error::ShapeMismatch {
            context: format!(
                "pool_backward upstream gradient {}x{}, expected {c}x{k}",
                d_u.rows(),
                d_u.cols()
            ),
        });
    }
    if !d_u.is_finite() {
        return Err(Error::NonFinite {
            context: "pool_backward upstream gradient".to_string(),
        });
    }
    let u = &cache.factors.u;
    let s = &cache.factors.s;
    let v = &cache.factors.v;

    // Differentiate through the sign flips, then pad to full width.
    let mut ubar = Matrix::zeros(c, r);
    for j in 0..k {
        for i in 0..c {
            ubar[(i, j)] = d_u[(i, j)] * cache.signs[j];
        }
    }

    let eps = BROADENING * s[0].powi(4);
    let m = matmul(&u.transpose(), &ubar)?;
    let mut inner = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            if i == j {
                continue;
            }
            let gap = s[j] * s[j] - s[i] * s[i];
            let coupling = gap / (gap * gap + eps);
            // Scale by s[j] here so `inner` is already (F o antisym) * S.
            inner[(i, j)] = coupling * (m[(i, j)] - m[(j, i)]) * s[j];
        }
    }
    let mut grad = matmul(&matmul(u, &inner)?, &v.transpose())?;

    // Orthogonal-complement term, present only when the map is tall
    // (channels > locations); otherwise U U^T is the identity.
    if r < c {
        let mut x = Matrix::zeros(c, r);
        for j in 0..k {
            let sj = s[j];
            for i in 0..c {
                x[(i, j)] = ubar[(i, j)] / sj;
            }
        }
        let utx = matmul(&u.transpose(), &x)?;
        let complement = x.sub(&matmul(u, &utx)?)?;
        grad = grad.add(&matmul(&complement, &v.transpose())?)?;
    }

    debug_assert_eq!(grad.rows(), c);
    debug_assert_eq!(grad.cols(), hw);
    Ok(grad)
}

/// Column-major flattening of the descriptor basis: column 0 first, then
/// column 1, and so on. [`unflatten`] is the exact inverse.
pub fn flatten(d: &SubspaceDescriptor) -> Vec<f64> {
    let c = d.u_k.rows();
    let mut out = Vec::with_capacity(c * d.k);
    for j in 0..d.k {
        for i in 0..c {
            out.push(d.u_k[(i, j)]);
        }
    }
    out
}

/// Rebuild a `channels x k` matrix from a column-major flat vector.
pub fn unflatten(flat: &[f64], channels: usize, k: usize) -> Result<Matrix> {
    if flat.len() != channels * k {
        return Err(Error::ShapeMismatch {
            context: format!("flat length {} does not match {channels}x{k}", flat.len()),
        });
    }
    Ok(Matrix::from_fn(channels, k, |i, j| flat[j * channels + i]))
}

/// Distance between the subspaces spanned by two descriptors:
/// `(1/sqrt(2)) * ||U1 U1^T - U2 U2^T||_F`, in [0, sqrt(k)].
///
/// Invariant to column signs and to any orthogonal recombination of the
/// columns within each basis.
pub fn projection_distance(d1: &SubspaceDescriptor, d2: &SubspaceDescriptor) -> Result<f64> {
    projection_distance_mats(&d1.u_k, &d2.u_k)
}

/// Projection distance on raw basis matrices (same shape required).
pub fn projection_distance_mats(u1: &Matrix, u2: &Matrix) -> Result<f64> {
    if u1.rows() != u2.rows() || u1.cols() != u2.cols() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "projection_distance: {}x{} vs {}x{}",
                u1.rows(),
                u1.cols(),
                u2.rows(),
                u2.cols()
            ),
        });
    }
    let p1 = matmul(u1, &u1.transpose())?;
    let p2 = matmul(u2, &u2.transpose())?;
    Ok(frobenius_norm(&p1.sub(&p2)?) / 2f64.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn feature_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(c, h, w, random_matrix(rng, c, h * w)).unwrap()
    }

    #[test]
    fn canonicalize_flip_case() {
        let u = Matrix::from_vec(2, 1, vec![0.1, -0.9]).unwrap();
        let (out, signs) = canonicalize_signs(&u);
        assert_eq!(signs, vec![-1.0]);
        assert_eq!(out[(0, 0)], -0.1);
        assert_eq!(out[(1, 0)], 0.9);
    }

    #[test]
    fn canonicalize_no_flip_case() {
        let u = Matrix::from_vec(2, 1, vec![0.9, -0.1]).unwrap();
        let (out, signs) = canonicalize_signs(&u);
        assert_eq!(signs, vec![1.0]);
        assert_eq!(out, u);
    }

    #[test]
    fn canonicalize_tie_breaks_on_lowest_row() {
        let u = Matrix::from_vec(2, 1, vec![0.5, -0.5]).unwrap();
        let (out, signs) = canonicalize_signs(&u);
        assert_eq!(signs, vec![1.0]);
        assert_eq!(out, u);
    }

    #[test]
    fn pool_forward_diagonal_case() {
        // A = [diag(3,2,1) | 0], 3x6, k = 2 -> U_2 = [e1, e2].
        let mut a = Matrix::zeros(3, 6);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = 2.0;
        a[(2, 2)] = 1.0;
        let fm = FeatureMap::new(3, 1, 6, a).unwrap();
        let (d, _) = pool_forward(&fm, 2).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d.u_k[(i, j)] - expect).abs() <= 1e-12);
            }
        }
        assert!((d.sigma_k[0] - 3.0).abs() <= 1e-12);
        assert!((d.sigma_k[1] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn pool_forward_rank_one_case() {
        let mut rng = Rng::new(10);
        let mut u: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut u {
            *x /= norm;
        }
        let v: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let a = Matrix::from_fn(5, 4, |i, j| u[i] * v[j]);
        let fm = FeatureMap::new(5, 2, 2, a).unwrap();
        let (d, _) = pool_forward(&fm, 1).unwrap();
        // The recovered vector equals +/-u with the canonical sign.
        let mut pivot = 0.0f64;
        for i in 0..5 {
            if u[i].abs() > pivot.abs() {
                pivot = u[i];
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..5 {
            assert!((d.u_k[(i, 0)] - sign * u[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn pool_forward_rank_errors() {
        let mut rng = Rng::new(11);
        let fm = feature_map(&mut rng, 3, 2, 2);
        assert!(matches!(
            pool_forward(&fm, 4),
            Err(Error::RankTooLarge {
                requested: 4,
                max: 3
            })
        ));
        // Rank-1 map cannot support k = 2.
        let u = [1.0, 2.0, 3.0];
        let v = [1.0, -1.0, 0.5, 2.0];
        let a = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        let fm = FeatureMap::new(3, 2, 2, a).unwrap();
        match pool_forward(&fm, 2) {
            Err(Error::RankDeficient {
                requested: 2,
                numerical_rank,
            }) => assert_eq!(numerical_rank, 1),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn pooled_projector_is_best_rank_k() {
        // || A - U_k U_k^T A ||_F equals the spectral residual and beats
        // random rank-k projectors.
        let mut rng = Rng::new(12);
        let fm = feature_map(&mut rng, 8, 4, 4);
        let k = 4;
        let (d, cache) = pool_forward(&fm, k).unwrap();
        let a = fm.matrix();
        let proj = matmul(&d.u_k, &matmul(&d.u_k.transpose(), a).unwrap()).unwrap();
        let resid = frobenius_norm(&a.sub(&proj).unwrap());
        let spectral: f64 = cache.factors.s[k..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        assert!((resid - spectral).abs() <= 1e-9);
        for _ in 0..100 {
            let q = random_matrix(&mut rng, 8, k);
            let f = svd(&q).unwrap();
            let basis = Matrix::from_fn(8, k, |i, j| f.u[(i, j)]);
            let p = matmul(&basis, &matmul(&basis.transpose(), a).unwrap()).unwrap();
            let other = frobenius_norm(&a.sub(&p).unwrap());
            assert!(resid <= other + 1e-12);
        }
    }

    #[test]
    fn pool_backward_zero_upstream() {
        let mut rng = Rng::new(13);
        let fm = feature_map(&mut rng, 5, 2, 4);
        let (_, cache) = pool_forward(&fm, 2).unwrap();
        let grad = pool_backward(&cache, &Matrix::zeros(5, 2)).unwrap();
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn pool_backward_shape_check() {
        let mut rng = Rng::new(14);
        let fm = feature_map(&mut rng, 5, 2, 4);
        let (_, cache) = pool_forward(&fm, 2).unwrap();
        assert!(matches!(
            pool_backward(&cache, &Matrix::zeros(5, 3)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn flatten_basis_case() {
        let u = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let d = SubspaceDescriptor {
            k: 2,
            u_k: u,
            sigma_k: vec![1.0, 1.0],
        };
        assert_eq!(flatten(&d), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn flatten_norm_equals_k() {
        let mut rng = Rng::new(15);
        let fm = feature_map(&mut rng, 6, 2, 4);
        let (d, _) = pool_forward(&fm, 3).unwrap();
        let flat = flatten(&d);
        let norm_sq: f64 = flat.iter().map(|x| x * x).sum();
        assert!((norm_sq - 3.0).abs() <= 1e-10);
    }

    #[test]
    fn flatten_round_trips() {
        let mut rng = Rng::new(16);
        let fm = feature_map(&mut rng, 6, 2, 4);
        let (d, _) = pool_forward(&fm, 3).unwrap();
        let flat = flatten(&d);
        let back = unflatten(&flat, 6, 3).unwrap();
        assert_eq!(back, d.u_k);
    }

    #[test]
    fn projection_distance_identity_and_orthogonal() {
        let mut rng = Rng::new(17);
        let fm = feature_map(&mut rng, 6, 2, 4);
        let (d, _) = pool_forward(&fm, 2).unwrap();
        assert!(projection_distance(&d, &d).unwrap() <= 1e-12);

        // k = 1 with orthogonal unit vectors -> distance exactly 1.
        let e1 = Matrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = Matrix::from_vec(3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let mk = |u: Matrix| SubspaceDescriptor {
            k: 1,
            u_k: u,
            sigma_k: vec![1.0],
        };
        let dist = projection_distance(&mk(e1), &mk(e2)).unwrap();
        assert!((dist - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn projection_distance_matches_algebraic_identity() {
        // (1/sqrt(2)) ||P1 - P2||_F == sqrt(k - ||U1^T U2||_F^2)
        let mut rng = Rng::new(18);
        for _ in 0..20 {
            let f1 = feature_map(&mut rng, 7, 2, 4);
            let f2 = feature_map(&mut rng, 7, 2, 4);
            let (d1, _) = pool_forward(&f1, 3).unwrap();
            let (d2, _) = pool_forward(&f2, 3).unwrap();
            let got = projection_distance(&d1, &d2).unwrap();
            let cross = matmul(&d1.u_k.transpose(), &d2.u_k).unwrap();
            let expect = (3.0 - frobenius_norm(&cross).powi(2)).max(0.0).sqrt();
            assert!((got - expect).abs() <= 1e-10, "got {got}, expect {expect}");
        }
    }

    #[test]
    fn projection_distance_sign_invariant() {
        let mut rng = Rng::new(19);
        let f1 = feature_map(&mut rng, 6, 2, 3);
        let f2 = feature_map(&mut rng, 6, 2, 3);
        let (d1, _) = pool_forward(&f1, 2).unwrap();
        let (d2, _) = pool_forward(&f2, 2).unwrap();
        let base = projection_distance(&d1, &d2).unwrap();
        let mut flipped = d1.clone();
        for i in 0..6 {
            flipped.u_k[(i, 1)] = -flipped.u_k[(i, 1)];
        }
        let after = projection_distance(&flipped, &d2).unwrap();
        assert!((base - after).abs() <= 1e-12);
    }

    #[test]
    fn projector_invariant_to_location_permutation() {
        let mut rng = Rng::new(20);
        let fm = feature_map(&mut rng, 6, 2, 4);
        let (d, _) = pool_forward(&fm, 3).unwrap();
        // Permute the spatial columns of A.
        let mut perm: Vec<usize> = (0..8).collect();
        rng.shuffle(&mut perm);
        let shuffled = Matrix::from_fn(6, 8, |i, j| fm.matrix()[(i, perm[j])]);
        let fm2 = FeatureMap::new(6, 2, 4, shuffled).unwrap();
        let (d2, _) = pool_forward(&fm2, 3).unwrap();
        let p1 = matmul(&d.u_k, &d.u_k.transpose()).unwrap();
        let p2 = matmul(&d2.u_k, &d2.u_k.transpose()).unwrap();
        assert!(p1.sub(&p2).unwrap().max_abs() <= 1e-8);
    }
}
