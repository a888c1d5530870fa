//! Generalized eigendecomposition of a Hermitian pencil `{A, B}` with `B`
//! positive semidefinite, possibly singular.

use super::{
    ensure_finite, ensure_square, hermitian_eigen, hermitian_part, pseudo_inverse_scaled,
    CMatrix, RankPolicy,
};
use crate::error::{invalid, mismatch, Result};
use num_complex::Complex64;

/// Relative tolerance on the most negative eigenvalue of `B`.
const PSD_TOLERANCE: f64 = 1e-8;

/// Joint diagonalization `X^H A X = diag(lambda_a)`, `X^H B X = diag(lambda_b)`.
///
/// Columns are ordered by descending `lambda_a / lambda_b`, modes in the null
/// space of `B` first (their ratio is infinite), ties broken by descending
/// `lambda_a`. Modes null in both matrices come last. Columns spanning the range of `B` are scaled to
/// `lambda_b = 1`.
#[derive(Debug, Clone)]
pub struct GevdResult {
    pub eigvectors: CMatrix,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
}

impl GevdResult {
    pub fn dim(&self) -> usize {
        self.lambda_a.len()
    }

    pub fn ratio(&self, i: usize) -> f64 {
        if self.lambda_b[i] == 0.0 {
            if self.lambda_a[i] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            self.lambda_a[i] / self.lambda_b[i]
        }
    }

    /// `Q = X^{-H}`, so that `A = Q diag(lambda_a) Q^H` and
    /// `B = Q diag(lambda_b) Q^H`.
    pub fn mixing_matrix(&self) -> Result<CMatrix> {
        self.eigvectors
            .clone()
            .try_inverse()
            .map(|inv| inv.adjoint())
            .ok_or_else(|| invalid("generalized eigenvector matrix is singular"))
    }

    /// Oblique projector onto the span of the first `rank` modes of `Q`
    /// along the remaining ones: `Q E_rank Q^{-1}`.
    pub fn dominant_projector(&self, rank: usize) -> Result<CMatrix> {
        let q = self.mixing_matrix()?;
        let q_inv = self.eigvectors.adjoint();
        let rank = rank.min(self.dim());
        Ok(q.columns(0, rank) * q_inv.rows(0, rank))
    }
}

/// Generalized eigendecomposition of `{A, B}`.
///
/// `B` is whitened on its range by `B^{†/2}`; the null space of `B` is
/// decoupled from the range by a Schur-complement correction so that the
/// returned basis diagonalizes both matrices.
pub fn gevd_pencil(a: &CMatrix, b: &CMatrix, policy: &RankPolicy) -> Result<GevdResult> {
    ensure_finite(a, "GEVD A")?;
    ensure_finite(b, "GEVD B")?;
    ensure_square(a, "GEVD A")?;
    ensure_square(b, "GEVD B")?;
    if a.shape() != b.shape() {
        return Err(mismatch(format!(
            "pencil sizes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.nrows();
    let a = hermitian_part(a);
    let b = hermitian_part(b);

    let (mu, u) = hermitian_eigen(&b);
    let scale = super::frobenius(&a).max(super::frobenius(&b));
    if scale == 0.0 {
        return Ok(GevdResult {
            eigvectors: super::identity(n),
            lambda_a: vec![0.0; n],
            lambda_b: vec![0.0; n],
        });
    }
    let min_mu = mu.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_mu < -PSD_TOLERANCE * scale {
        return Err(invalid(format!(
            "B is indefinite: smallest eigenvalue {min_mu:e} (scale {scale:e})"
        )));
    }
    let tol = policy.relative_tolerance * scale;
    let r = mu.iter().filter(|&&m| m > tol).count();
    // Eigenvalues are sorted descending: the first r columns span range(B).
    let u_range = u.columns(0, r).into_owned();
    let u_null = u.columns(r, n - r).into_owned();

    let mut whitening = u_range.clone();
    for (j, &m) in mu.iter().take(r).enumerate() {
        whitening.column_mut(j).scale_mut(1.0 / m.sqrt());
    }

    let a_null = u_null.adjoint() * &a * &u_null;
    let mut range_vectors = whitening.clone();
    let mut reduced = whitening.adjoint() * &a * &whitening;
    if r < n && r > 0 {
        let coupling = u_null.adjoint() * &a * &whitening;
        let a_null_pinv = pseudo_inverse_scaled(&a_null, policy, scale)?;
        let correction = -(&a_null_pinv * &coupling);
        range_vectors += &u_null * &correction;
        reduced -= coupling.adjoint() * &a_null_pinv * &coupling;
    }

    let mut modes: Vec<(f64, f64, nalgebra::DVector<Complex64>)> = Vec::with_capacity(n);
    if r < n {
        let (alpha, e) = hermitian_eigen(&a_null);
        let x_null = &u_null * e;
        for (j, &al) in alpha.iter().enumerate() {
            // modes null in both A and B carry no information and sort last
            let al = if al.abs() <= tol { 0.0 } else { al };
            modes.push((al, 0.0, x_null.column(j).into_owned()));
        }
    }
    if r > 0 {
        let (theta, v) = hermitian_eigen(&reduced);
        let x_range = &range_vectors * v;
        for (j, &th) in theta.iter().enumerate() {
            modes.push((th, 1.0, x_range.column(j).into_owned()));
        }
    }

    modes.sort_by(|x, y| {
        let key = |m: &(f64, f64, nalgebra::DVector<Complex64>)| match (m.0, m.1) {
            (a, b) if b != 0.0 => a / b,
            (a, _) if a > 0.0 => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        };
        let (rx, ry) = (key(x), key(y));
        ry.total_cmp(&rx).then(y.0.total_cmp(&x.0))
    });

    let mut eigvectors = CMatrix::zeros(n, n);
    let mut lambda_a = Vec::with_capacity(n);
    let mut lambda_b = Vec::with_capacity(n);
    for (j, (la, lb, col)) in modes.into_iter().enumerate() {
        eigvectors.set_column(j, &col);
        lambda_a.push(la);
        lambda_b.push(lb);
    }
    Ok(GevdResult {
        eigvectors,
        lambda_a,
        lambda_b,
    })
}

/// Rank-`rank` GEVD approximation of `A - B`:
/// `Q diag(max(lambda_a_i - lambda_b_i, 0) for i < rank, 0, ...) Q^H`.
pub fn gevd_lowrank_subtract(
    a: &CMatrix,
    b: &CMatrix,
    rank: usize,
    policy: &RankPolicy,
) -> Result<CMatrix> {
    if rank > a.nrows() {
        return Err(invalid(format!(
            "rank {rank} exceeds dimension {}",
            a.nrows()
        )));
    }
    let g = gevd_pencil(a, b, policy)?;
    let q = g.mixing_matrix()?;
    let n = g.dim();
    let mut scaled = q.clone();
    for i in 0..n {
        let d = if i < rank {
            (g.lambda_a[i] - g.lambda_b[i]).max(0.0)
        } else {
            0.0
        };
        scaled.column_mut(i).scale_mut(d);
    }
    Ok(hermitian_part(&(scaled * q.adjoint())))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{c64, frobenius, identity};
    use super::*;

    fn diag(values: &[f64]) -> CMatrix {
        let mut d = CMatrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            d[(i, i)] = c64(v, 0.0);
        }
        d
    }

    #[test]
    fn modes_null_in_both_matrices_sort_last() {
        let a = diag(&[1.0, 0.0, 2.0]);
        let b = diag(&[1.0, 0.0, 0.0]);
        let g = gevd_pencil(&a, &b, &RankPolicy::default()).unwrap();
        assert_eq!(g.lambda_a, vec![2.0, 1.0, 0.0]);
        assert_eq!(g.lambda_b, vec![0.0, 1.0, 0.0]);
        assert_eq!(g.ratio(0), f64::INFINITY);
        assert_eq!(g.ratio(2), 0.0);
        let rss = gevd_lowrank_subtract(&a, &b, 1, &RankPolicy::default()).unwrap();
        assert_close(&rss, &diag(&[0.0, 0.0, 2.0]), 1e-12);
    }

    fn off_diagonal_norm(a: &CMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    }

    fn check_diagonalizes(a: &CMatrix, b: &CMatrix, g: &GevdResult, tol: f64) {
        let x = &g.eigvectors;
        let da = x.adjoint() * a * x;
        let db = x.adjoint() * b * x;
        let sa = frobenius(&da).max(1.0);
        let sb = frobenius(&db).max(1.0);
        assert!(off_diagonal_norm(&da) <= tol * sa, "A not diagonal: {da}");
        assert!(off_diagonal_norm(&db) <= tol * sb, "B not diagonal: {db}");
        for i in 0..g.dim() {
            assert!((da[(i, i)].re - g.lambda_a[i]).abs() <= tol * sa);
            assert!((db[(i, i)].re - g.lambda_b[i]).abs() <= tol * sb);
        }
        let q = g.mixing_matrix().unwrap();
        let ra = &q * diag(&g.lambda_a) * q.adjoint();
        let rb = &q * diag(&g.lambda_b) * q.adjoint();
        assert!(frobenius(&(ra - a)) <= 1e-8 * frobenius(a).max(1.0));
        assert!(frobenius(&(rb - b)) <= 1e-8 * frobenius(b).max(1.0));
    }

    #[test]
    fn diagonal_pencil_with_identity() {
        let a = diag(&[1.0, 2.0]);
        let g = gevd_pencil(&a, &identity(2), &RankPolicy::default()).unwrap();
        assert!((g.ratio(0) - 2.0).abs() < 1e-14);
        assert!((g.ratio(1) - 1.0).abs() < 1e-14);
        // unitary and diagonal up to phase
        let x = &g.eigvectors;
        assert!(x[(1, 0)].norm() > 1.0 - 1e-12 && x[(0, 0)].norm() < 1e-12);
        assert_close(&(x.adjoint() * x), &identity(2), 1e-12);
    }

    #[test]
    fn equal_pencil_has_unit_ratios() {
        let mut r = rng(3);
        let a = random_psd(&mut r, 4, 4);
        let g = gevd_pencil(&a, &a, &RankPolicy::default()).unwrap();
        for i in 0..4 {
            assert!((g.ratio(i) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_full_rank_pencil_is_jointly_diagonalized() {
        let mut r = rng(5);
        for n in 1..=8 {
            let a = random_hermitian(&mut r, n);
            let b = random_psd(&mut r, n, n);
            let g = gevd_pencil(&a, &b, &RankPolicy::default()).unwrap();
            check_diagonalizes(&a, &b, &g, 1e-9);
            for i in 1..n {
                assert!(g.ratio(i - 1) >= g.ratio(i));
            }
        }
    }

    #[test]
    fn singular_b_null_modes_come_first() {
        let mut r = rng(9);
        for n in 2..=6 {
            for rank_b in 1..n {
                let a = random_psd(&mut r, n, n);
                let b = random_psd(&mut r, n, rank_b);
                let g = gevd_pencil(&a, &b, &RankPolicy::default()).unwrap();
                check_diagonalizes(&a, &b, &g, 1e-8);
                for i in 0..n - rank_b {
                    assert_eq!(g.lambda_b[i], 0.0);
                    assert!(g.ratio(i).is_infinite());
                }
                for i in n - rank_b..n {
                    assert!((g.lambda_b[i] - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn indefinite_b_rejected() {
        let a = identity(2);
        let b = diag(&[1.0, -0.5]);
        assert!(gevd_pencil(&a, &b, &RankPolicy::default()).is_err());
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(gevd_pencil(&identity(2), &identity(3), &RankPolicy::default()).is_err());
    }

    #[test]
    fn subtract_equal_pencil_is_zero() {
        let mut r = rng(13);
        let a = random_psd(&mut r, 4, 4);
        for rank in 0..=4 {
            let d = gevd_lowrank_subtract(&a, &a, rank, &RankPolicy::default()).unwrap();
            assert!(frobenius(&d) <= 1e-9 * frobenius(&a));
        }
    }

    #[test]
    fn subtract_recovers_rank_one_surplus() {
        let mut r = rng(17);
        for n in 1..=6 {
            let v = random_matrix(&mut r, n, 1);
            let surplus = &v * v.adjoint();
            let a = identity(n) + &surplus;
            let d = gevd_lowrank_subtract(&a, &identity(n), 1, &RankPolicy::default()).unwrap();
            assert_close(&d, &surplus, 1e-9);
        }
    }

    #[test]
    fn subtract_full_rank_diagonal() {
        let a = diag(&[5.0, 3.0, 2.0]);
        let b = diag(&[1.0, 1.0, 0.5]);
        let d = gevd_lowrank_subtract(&a, &b, 3, &RankPolicy::default()).unwrap();
        assert_close(&d, &(a - b), 1e-12);
    }

    #[test]
    fn subtract_rejects_excess_rank() {
        assert!(gevd_lowrank_subtract(&identity(2), &identity(2), 3, &RankPolicy::default()).is_err());
    }

    #[test]
    fn subtract_clamps_negative_differences() {
        let a = diag(&[2.0, 0.5]);
        let d = gevd_lowrank_subtract(&a, &identity(2), 2, &RankPolicy::default()).unwrap();
        assert_close(&d, &diag(&[1.0, 0.0]), 1e-12);
    }

    #[test]
    fn dominant_projector_is_idempotent() {
        let mut r = rng(21);
        let a = random_psd(&mut r, 4, 4);
        let b = random_psd(&mut r, 4, 4);
        let g = gevd_pencil(&a, &b, &RankPolicy::default()).unwrap();
        let p = g.dominant_projector(2).unwrap();
        assert_close(&(&p * &p), &p, 1e-9);
    }

    mod props {
        use super::*;
        use crate::linalg::hermitian_eigen;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn lowrank_subtract_is_psd_with_bounded_rank(seed in any::<u64>(), n in 1usize..7, rank in 0usize..7) {
                let rank = rank.min(n);
                let mut r = rng(seed);
                let a = random_psd(&mut r, n, n);
                let b = random_psd(&mut r, n, n);
                let d = gevd_lowrank_subtract(&a, &b, rank, &RankPolicy::default()).unwrap();
                let (vals, _) = hermitian_eigen(&d);
                let scale = frobenius(&a).max(1.0);
                prop_assert!(vals.iter().all(|&v| v >= -1e-9 * scale));
                let nonzero = vals.iter().filter(|&&v| v > 1e-9 * scale).count();
                prop_assert!(nonzero <= rank);
                prop_assert!(frobenius(&(&d - d.adjoint())) <= 1e-12 * scale);
            }

            #[test]
            fn full_rank_reconstruction(seed in any::<u64>(), n in 1usize..9) {
                let mut r = rng(seed);
                let a = random_hermitian(&mut r, n);
                let b = random_psd(&mut r, n, n);
                let g = gevd_pencil(&a, &b, &RankPolicy::default()).unwrap();
                let q = g.mixing_matrix().unwrap();
                let ra = &q * diag(&g.lambda_a) * q.adjoint();
                let rb = &q * diag(&g.lambda_b) * q.adjoint();
                prop_assert!(frobenius(&(ra - &a)) <= 1e-8 * frobenius(&a));
                prop_assert!(frobenius(&(rb - &b)) <= 1e-8 * frobenius(&b));
            }
        }
    }
}
