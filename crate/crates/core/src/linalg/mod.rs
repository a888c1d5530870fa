//! Complex Hermitian linear algebra for the correlation-domain filters.
//!
//! Everything here operates on small dense matrices (dimension M + L, at most
//! about 16) stored as [`CMatrix`]. The decompositions are backed by
//! `nalgebra`; rank decisions are made explicitly through [`RankPolicy`] so
//! that rank-deficient correlation matrices are handled the same way
//! everywhere.

mod blocks;
mod gevd;

pub use blocks::{
    check_generalized_inverse_conditions, extended_generalized_inverse, schur_complement,
    theorem1_identity_check, ConditionReport, ExtendedBlocks,
};
pub use gevd::{gevd_lowrank_subtract, gevd_pencil, GevdResult};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, mismatch, Result};

/// Dense complex matrix used for every correlation matrix and filter.
pub type CMatrix = DMatrix<Complex64>;

/// Rank decision used by pseudo-inverses and generalized eigendecompositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    /// Singular values below `relative_tolerance * reference` are treated as zero.
    pub relative_tolerance: f64,
    /// Keep exactly this many leading singular values (still subject to the tolerance).
    pub explicit_rank: Option<usize>,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            explicit_rank: None,
        }
    }
}

impl RankPolicy {
    pub fn with_tolerance(relative_tolerance: f64) -> Self {
        Self {
            relative_tolerance,
            ..Self::default()
        }
    }

    pub fn with_rank(rank: usize) -> Self {
        Self {
            explicit_rank: Some(rank),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0) || !self.relative_tolerance.is_finite() {
            return Err(invalid(format!(
                "rank tolerance must be positive, got {}",
                self.relative_tolerance
            )));
        }
        Ok(())
    }
}

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn ensure_finite(a: &CMatrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(invalid(format!("{what} is empty")));
    }
    if !is_finite(a) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

pub(crate) fn ensure_square(a: &CMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(mismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Hermitian part `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unit selection vector with a one at position `r`.
pub fn selection_vector(dim: usize, r: usize) -> CMatrix {
    let mut t = CMatrix::zeros(dim, 1);
    t[(r, 0)] = c64(1.0, 0.0);
    t
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn block(a: &CMatrix, row: usize, col: usize, nrows: usize, ncols: usize) -> CMatrix {
    a.view((row, col), (nrows, ncols)).into_owned()
}

/// Assemble `[[tl, tr], [bl, br]]`.
pub fn assemble_2x2(tl: &CMatrix, tr: &CMatrix, bl: &CMatrix, br: &CMatrix) -> CMatrix {
    let (m, l) = (tl.nrows(), bl.nrows());
    let (cm, cl) = (tl.ncols(), tr.ncols());
    let mut out = CMatrix::zeros(m + l, cm + cl);
    out.view_mut((0, 0), (m, cm)).copy_from(tl);
    out.view_mut((0, cm), (m, cl)).copy_from(tr);
    out.view_mut((m, 0), (l, cm)).copy_from(bl);
    out.view_mut((m, cm), (l, cl)).copy_from(br);
    out
}

/// Stack `top` over `bottom`.
pub fn vstack(top: &CMatrix, bottom: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values (descending) with left and right singular vectors for the
/// strictly positive ones.
///
/// Hermitian inputs are handled by their eigendecomposition; other inputs by
/// the eigendecomposition of the dilation `[[0, A], [A^H, 0]]`, whose
/// positive eigenvalues are the singular values of `A`.
struct Singular {
    values: Vec<f64>,
    left: CMatrix,
    right: CMatrix,
}

fn singular_decomposition(a: &CMatrix) -> Singular {
    let (m, n) = a.shape();
    let norm = frobenius(a);
    if m == n && frobenius(&(a - a.adjoint())) <= 1e-14 * norm {
        let (lambda, v) = hermitian_eigen(a);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lambda[j].abs().total_cmp(&lambda[i].abs()));
        let mut left = CMatrix::zeros(n, n);
        let mut right = CMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (dst, &src) in order.iter().enumerate() {
            let sign = if lambda[src] < 0.0 { -1.0 } else { 1.0 };
            values.push(lambda[src].abs());
            left.set_column(dst, &v.column(src).scale(sign));
            right.set_column(dst, &v.column(src));
        }
        return Singular {
            values,
            left,
            right,
        };
    }
    let mut h = CMatrix::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(a);
    h.view_mut((m, 0), (n, m)).copy_from(&a.adjoint());
    let (lambda, v) = hermitian_eigen(&h);
    let k = m.min(n);
    let root2 = std::f64::consts::SQRT_2;
    let mut left = CMatrix::zeros(m, k);
    let mut right = CMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for j in 0..k {
        let sigma = lambda[j].max(0.0);
        values.push(sigma);
        left.set_column(j, &v.column(j).rows(0, m).scale(root2));
        right.set_column(j, &v.column(j).rows(m, n).scale(root2));
    }
    Singular {
        values,
        left,
        right,
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    singular_decomposition(a).values
}

/// Largest singular value.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Moore–Penrose pseudo-inverse with the threshold relative to the largest
/// singular value of `a`.
pub fn pseudo_inverse(a: &CMatrix, policy: &RankPolicy) -> Result<CMatrix> {
    pseudo_inverse_scaled(a, policy, 0.0)
}

/// Pseudo-inverse whose rank threshold is relative to
/// `max(sigma_max(a), reference_scale)`.
///
/// Matrices obtained as differences (Schur complements, subtracted
/// correlations) use the scale of the matrices they were computed from, so
/// cancellation residue is not inverted.
pub fn pseudo_inverse_scaled(
    a: &CMatrix,
    policy: &RankPolicy,
    reference_scale: f64,
) -> Result<CMatrix> {
    ensure_finite(a, "pseudo-inverse input")?;
    policy.validate()?;
    let sv = singular_decomposition(a);
    let sigma_max = sv.values.first().copied().unwrap_or(0.0);
    let threshold = policy.relative_tolerance * sigma_max.max(reference_scale);
    let keep_max = policy.explicit_rank.unwrap_or(sv.values.len());

    let mut out = CMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in sv.values.iter().enumerate().take(keep_max) {
        if s <= threshold || s == 0.0 {
            break;
        }
        out += (sv.right.column(k) * sv.left.column(k).adjoint()).scale(1.0 / s);
    }
    Ok(out)
}

/// Numerical rank under `policy`, relative to the largest singular value.
pub fn numerical_rank(a: &CMatrix, policy: &RankPolicy) -> usize {
    let sigma = singular_values(a);
    let threshold = policy.relative_tolerance * sigma.first().copied().unwrap_or(0.0);
    sigma.iter().filter(|&&s| s > threshold && s > 0.0).count()
}
