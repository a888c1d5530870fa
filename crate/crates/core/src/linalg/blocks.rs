//! Block operations on extended correlation matrices `[[R_mm, R_ml], [R_lm, R_ll]]`.

use super::{
    assemble_2x2, block, ensure_finite, ensure_square, frobenius, hermitian_part, pseudo_inverse,
    pseudo_inverse_scaled, CMatrix, RankPolicy,
};
use crate::error::{mismatch, Result};

/// Relative tolerance of the generalized-inverse condition checks.
const CONDITION_TOLERANCE: f64 = 1e-8;
/// Relative tolerance on `R_el = R_le^H`.
const ADJOINT_TOLERANCE: f64 = 1e-8;

/// The four blocks of an extended matrix with `m` leading (microphone) and
/// `l` trailing (loudspeaker) coordinates.
#[derive(Debug, Clone)]
pub struct ExtendedBlocks {
    pub mm: CMatrix,
    pub ml: CMatrix,
    pub lm: CMatrix,
    pub ll: CMatrix,
}

impl ExtendedBlocks {
    pub fn split(r: &CMatrix, m: usize) -> Result<Self> {
        ensure_square(r, "extended matrix")?;
        let n = r.nrows();
        if m == 0 || m >= n {
            return Err(mismatch(format!(
                "cannot split {n}x{n} matrix with {m} leading channels"
            )));
        }
        let l = n - m;
        Ok(Self {
            mm: block(r, 0, 0, m, m),
            ml: block(r, 0, m, m, l),
            lm: block(r, m, 0, l, m),
            ll: block(r, m, m, l, l),
        })
    }

    pub fn assemble(&self) -> CMatrix {
        assemble_2x2(&self.mm, &self.ml, &self.lm, &self.ll)
    }

    pub fn schur_complement(&self, policy: &RankPolicy) -> Result<CMatrix> {
        schur_complement(&self.mm, &self.ml, &self.ll, &self.lm, policy)
    }

    pub fn generalized_inverse(&self, policy: &RankPolicy) -> Result<CMatrix> {
        extended_generalized_inverse(&self.mm, &self.ll, &self.lm, policy)
    }
}

fn check_blocks(rmm: &CMatrix, rll: &CMatrix, rle: &CMatrix) -> Result<()> {
    ensure_finite(rmm, "R_mm")?;
    ensure_finite(rll, "R_ll")?;
    ensure_finite(rle, "R_le")?;
    ensure_square(rmm, "R_mm")?;
    ensure_square(rll, "R_ll")?;
    if rle.shape() != (rll.nrows(), rmm.nrows()) {
        return Err(mismatch(format!(
            "R_le must be {}x{}, got {}x{}",
            rll.nrows(),
            rmm.nrows(),
            rle.nrows(),
            rle.ncols()
        )));
    }
    Ok(())
}

/// `Σ = R_mm - R_el R_ll^† R_le`, symmetrized.
///
/// `rel` is the `M x L` cross block and must equal `rle^H`.
pub fn schur_complement(
    rmm: &CMatrix,
    rel: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    policy: &RankPolicy,
) -> Result<CMatrix> {
    check_blocks(rmm, rll, rle)?;
    ensure_finite(rel, "R_el")?;
    if rel.shape() != (rmm.nrows(), rll.nrows()) {
        return Err(mismatch(format!(
            "R_el must be {}x{}, got {}x{}",
            rmm.nrows(),
            rll.nrows(),
            rel.nrows(),
            rel.ncols()
        )));
    }
    let asym = frobenius(&(rel - rle.adjoint()));
    let scale = frobenius(rel).max(frobenius(rle));
    if asym > ADJOINT_TOLERANCE * scale {
        return Err(mismatch(format!(
            "R_el is not the adjoint of R_le (deviation {asym:e})"
        )));
    }
    let rll_pinv = pseudo_inverse(rll, policy)?;
    Ok(hermitian_part(&(rmm - rel * rll_pinv * rle)))
}

/// Block generalized inverse of `[[R_mm, R_el], [R_le, R_ll]]`:
///
/// ```text
/// [ Σ^†                 , -Σ^† R_el R_ll^†                          ]
/// [ -R_ll^† R_le Σ^†    ,  R_ll^† + R_ll^† R_le Σ^† R_el R_ll^†     ]
/// ```
///
/// with `Σ` the Schur complement. `Σ^†` is thresholded relative to the scale
/// of `R_mm`, since `Σ` is a difference of matrices of that size.
pub fn extended_generalized_inverse(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    policy: &RankPolicy,
) -> Result<CMatrix> {
    check_blocks(rmm, rll, rle)?;
    let rel = rle.adjoint();
    let rll_pinv = pseudo_inverse(rll, policy)?;
    let sigma = hermitian_part(&(rmm - &rel * &rll_pinv * rle));
    let reference = super::spectral_norm(rmm);
    let sigma_pinv = pseudo_inverse_scaled(&sigma, policy, reference)?;
    let k = &rll_pinv * rle; // L x M
    let tr = -(&sigma_pinv * k.adjoint());
    let bl = -(&k * &sigma_pinv);
    let br = &rll_pinv + &k * &sigma_pinv * k.adjoint();
    Ok(assemble_2x2(&sigma_pinv, &tr, &bl, &br))
}

/// Outcome of the four generalized-inverse conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// `R G R = R`, `G R G = G`, `(R G)^H = R G`, `(G R)^H = G R`.
    pub holds: [bool; 4],
    /// Relative residual of each condition.
    pub residuals: [f64; 4],
}

impl ConditionReport {
    pub fn all(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

fn relative_gap(x: &CMatrix, y: &CMatrix) -> f64 {
    let diff = frobenius(&(x - y));
    let scale = frobenius(x).max(frobenius(y));
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

pub fn check_generalized_inverse_conditions(r: &CMatrix, g: &CMatrix) -> Result<ConditionReport> {
    ensure_square(r, "R")?;
    if g.shape() != r.shape() {
        return Err(mismatch(format!(
            "G must be {:?}, got {:?}",
            r.shape(),
            g.shape()
        )));
    }
    let rg = r * g;
    let gr = g * r;
    let residuals = [
        relative_gap(&(&rg * r), r),
        relative_gap(&(&gr * g), g),
        relative_gap(&rg.adjoint(), &rg),
        relative_gap(&gr.adjoint(), &gr),
    ];
    Ok(ConditionReport {
        holds: residuals.map(|x| x <= CONDITION_TOLERANCE),
        residuals,
    })
}

/// `‖(ABA)^† ABC − A^† C‖_F / max(1, ‖A^† C‖_F)`.
pub fn theorem1_identity_check(
    a: &CMatrix,
    b: &CMatrix,
    c: &CMatrix,
    policy: &RankPolicy,
) -> Result<f64> {
    ensure_square(a, "A")?;
    ensure_square(b, "B")?;
    if a.shape() != b.shape() || c.nrows() != a.nrows() {
        return Err(mismatch("theorem operands are not conformable"));
    }
    let aba = a * b * a;
    let lhs = pseudo_inverse(&aba, policy)? * a * b * c;
    let rhs = pseudo_inverse(a, policy)? * c;
    Ok(frobenius(&(lhs - &rhs)) / frobenius(&rhs).max(1.0))
}
