//! Per-bin closed-form filters from exact or estimated correlation matrices.
//!
//! Extended vectors stack the `M` microphones above the `L` loudspeakers.
//! `rle` is the `L x M` cross-correlation `E{l e^H}`.

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{
    assemble_2x2, block, extended_generalized_inverse, frobenius, hermitian_part, identity,
    pseudo_inverse, pseudo_inverse_scaled, spectral_norm, vstack, CMatrix, RankPolicy,
};

use super::StageKind;

/// One bin of a closed-form solution: the overall filter and its stages.
///
/// The overall filter is the product of the stage matrices restricted to the
/// reference column.
#[derive(Debug, Clone)]
pub struct BinFilter {
    pub filter: CMatrix,
    pub stages: Vec<(StageKind, CMatrix)>,
}

fn ensure_dims(rmm: &CMatrix, rll: &CMatrix, rle: &CMatrix, r: usize) -> Result<(usize, usize)> {
    let m = rmm.nrows();
    let l = rll.nrows();
    if !rmm.is_square() || !rll.is_square() {
        return Err(mismatch("correlation matrices must be square"));
    }
    if rle.shape() != (l, m) {
        return Err(mismatch(format!(
            "R_le must be {l}x{m}, got {}x{}",
            rle.nrows(),
            rle.ncols()
        )));
    }
    if r >= m {
        return Err(invalid(format!("reference channel {r} of {m} microphones")));
    }
    Ok((m, l))
}

fn ensure_shape(a: &CMatrix, rows: usize, cols: usize, name: &str) -> Result<()> {
    if a.shape() != (rows, cols) {
        return Err(mismatch(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn column(a: &CMatrix, r: usize) -> CMatrix {
    a.columns(r, 1).into_owned()
}

/// `Σ^† ` with `Σ = R_mm - R_el R_ll^† R_le`, thresholded relative to `R_mm`.
fn schur_pinv(
    rmm: &CMatrix,
    rll_pinv: &CMatrix,
    rle: &CMatrix,
    policy: &RankPolicy,
) -> Result<CMatrix> {
    let sigma = hermitian_part(&(rmm - rle.adjoint() * rll_pinv * rle));
    pseudo_inverse_scaled(&sigma, policy, spectral_norm(rmm))
}

/// `w = R_mm^† R_ss t_r`.
pub fn mwf(rmm: &CMatrix, rss: &CMatrix, r: usize, policy: &RankPolicy) -> Result<BinFilter> {
    let m = rmm.nrows();
    ensure_shape(rmm, m, m, "R_mm")?;
    ensure_shape(rss, m, m, "R_ss")?;
    if r >= m {
        return Err(invalid(format!("reference channel {r} of {m} microphones")));
    }
    let nr = pseudo_inverse(rmm, policy)? * rss;
    Ok(BinFilter {
        filter: column(&nr, r),
        stages: vec![(StageKind::Nr, nr)],
    })
}

/// `w = G R_ss_ext t_r` with `G` the block generalized inverse of the
/// extended correlation.
pub fn mwf_ext(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    rss_ext: &CMatrix,
    r: usize,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let (m, l) = ensure_dims(rmm, rll, rle, r)?;
    ensure_shape(rss_ext, m + l, m + l, "extended R_ss")?;
    let nr = extended_generalized_inverse(rmm, rll, rle, policy)? * rss_ext;
    Ok(BinFilter {
        filter: column(&nr, r),
        stages: vec![(StageKind::NrExt, nr)],
    })
}

/// AEC `[I; -R_ll^† R_le]` followed by the NR `Σ^† R_ss`.
pub fn aec_nr(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    rss: &CMatrix,
    r: usize,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let (m, _) = ensure_dims(rmm, rll, rle, r)?;
    ensure_shape(rss, m, m, "R_ss")?;
    let rll_pinv = pseudo_inverse(rll, policy)?;
    let aec = vstack(&identity(m), &-(&rll_pinv * rle));
    let nr = schur_pinv(rmm, &rll_pinv, rle, policy)? * rss;
    Ok(BinFilter {
        filter: &aec * column(&nr, r),
        stages: vec![(StageKind::Aec, aec), (StageKind::Nr, nr)],
    })
}

/// AEC with the true echo path `[I; -R_ll^† R_ll F^H]` followed by the
/// speech-plus-noise NR `(R_ss + R_nn)^† R_ss`. `f_lin` is `M x L`.
pub fn aec_nr_lin(
    rll: &CMatrix,
    f_lin: &CMatrix,
    rss: &CMatrix,
    rnn: &CMatrix,
    r: usize,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let m = rss.nrows();
    let l = rll.nrows();
    ensure_shape(rss, m, m, "R_ss")?;
    ensure_shape(rnn, m, m, "R_nn")?;
    ensure_shape(rll, l, l, "R_ll")?;
    ensure_shape(f_lin, m, l, "echo path")?;
    if r >= m {
        return Err(invalid(format!("reference channel {r} of {m} microphones")));
    }
    let rll_pinv = pseudo_inverse(rll, policy)?;
    let aec = vstack(&identity(m), &-(&rll_pinv * rll * f_lin.adjoint()));
    let nr = pseudo_inverse(&hermitian_part(&(rss + rnn)), policy)? * rss;
    Ok(BinFilter {
        filter: &aec * column(&nr, r),
        stages: vec![(StageKind::Aec, aec), (StageKind::Nr, nr)],
    })
}

/// NR `diag(N, I_L)` followed by the AEC `[I; -R_ll^† R_le N]`.
///
/// `N = Σ^† R_ss`, or `R_mm^† R_ss` when `modified`.
pub fn nr_aec(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    rss: &CMatrix,
    r: usize,
    modified: bool,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let (m, l) = ensure_dims(rmm, rll, rle, r)?;
    ensure_shape(rss, m, m, "R_ss")?;
    let rll_pinv = pseudo_inverse(rll, policy)?;
    let n = if modified {
        pseudo_inverse(rmm, policy)? * rss
    } else {
        schur_pinv(rmm, &rll_pinv, rle, policy)? * rss
    };
    let nr = assemble_2x2(
        &n,
        &CMatrix::zeros(m, l),
        &CMatrix::zeros(l, m),
        &identity(l),
    );
    let aec = vstack(&identity(m), &-(&rll_pinv * rle * &n));
    Ok(BinFilter {
        filter: &nr * column(&aec, r),
        stages: vec![(StageKind::Nr, nr), (StageKind::Aec, aec)],
    })
}

/// `W = G (R_ss_ext + R_eses_ext)` with its upper-right `M x L` block zeroed.
fn nrext_matrix(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    speech_plus_echo: &CMatrix,
    policy: &RankPolicy,
) -> Result<CMatrix> {
    let m = rmm.nrows();
    let l = rll.nrows();
    ensure_shape(speech_plus_echo, m + l, m + l, "extended speech plus echo")?;
    let mut w = extended_generalized_inverse(rmm, rll, rle, policy)? * speech_plus_echo;
    w.view_mut((0, m), (m, l)).fill(num_complex::Complex64::new(0.0, 0.0));
    Ok(w)
}

/// NR_ext, then an AEC from the post-NR_ext correlations, then a PF.
///
/// `speech_plus_echo` is the extended correlation of desired speech plus
/// far-end-speech echo. The PF desired-speech correlation is
/// `W_11^H R_ss`, exact when the true `R_ss` is supplied.
pub fn nrext_aec_pf(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    rss: &CMatrix,
    speech_plus_echo: &CMatrix,
    r: usize,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let (m, l) = ensure_dims(rmm, rll, rle, r)?;
    ensure_shape(rss, m, m, "R_ss")?;
    let w = nrext_matrix(rmm, rll, rle, speech_plus_echo, policy)?;
    let rtt = assemble_2x2(rmm, &rle.adjoint(), rle, rll);
    let post = hermitian_part(&(w.adjoint() * &rtt * &w));
    let rmm_p = block(&post, 0, 0, m, m);
    let rll_p = block(&post, m, m, l, l);
    let rlm_p = block(&post, m, 0, l, m);
    let rll_p_pinv = pseudo_inverse(&rll_p, policy)?;
    let aec = vstack(&identity(m), &-(&rll_p_pinv * &rlm_p));
    let rsps = block(&w, 0, 0, m, m).adjoint() * rss;
    let pf = schur_pinv(&rmm_p, &rll_p_pinv, &rlm_p, policy)? * rsps;
    Ok(BinFilter {
        filter: &w * &aec * column(&pf, r),
        stages: vec![
            (StageKind::NrExt, w),
            (StageKind::Aec, aec),
            (StageKind::Pf, pf),
        ],
    })
}

/// NR_ext followed by the AEC `[I; -R_lsls^† R_lsls F^H]`; the PF reduces
/// to a selection.
#[allow(clippy::too_many_arguments)]
pub fn nrext_aec_lin(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    rlsls: &CMatrix,
    f_lin: &CMatrix,
    speech_plus_echo: &CMatrix,
    r: usize,
    policy: &RankPolicy,
) -> Result<BinFilter> {
    let (m, l) = ensure_dims(rmm, rll, rle, r)?;
    ensure_shape(rlsls, l, l, "R_lsls")?;
    ensure_shape(f_lin, m, l, "echo path")?;
    let w = nrext_matrix(rmm, rll, rle, speech_plus_echo, policy)?;
    let aec = vstack(
        &identity(m),
        &-(pseudo_inverse(rlsls, policy)? * rlsls * f_lin.adjoint()),
    );
    Ok(BinFilter {
        filter: &w * column(&aec, r),
        stages: vec![(StageKind::NrExt, w), (StageKind::Aec, aec)],
    })
}

/// `||R w - R_ss t_r||_F`, relative to `||R_ss t_r||_F` when that is nonzero.
pub fn wiener_hopf_residual(
    r_in: &CMatrix,
    r_desired: &CMatrix,
    filter: &CMatrix,
    r: usize,
) -> Result<f64> {
    let d = r_in.nrows();
    ensure_shape(r_in, d, d, "input correlation")?;
    ensure_shape(r_desired, d, d, "desired correlation")?;
    ensure_shape(filter, d, 1, "filter")?;
    if r >= d {
        return Err(invalid(format!("reference channel {r} of {d}")));
    }
    let target = column(r_desired, r);
    let res = frobenius(&(r_in * filter - &target));
    let scale = frobenius(&target);
    Ok(if scale > 0.0 { res / scale } else { res })
}

/// Relative deviation from `R_lsls R_ll^† R_le = R_lses`, the relation
/// under which NR_ext-AEC-PF is equivalent to the extended MWF.
pub fn additive_map_residual(
    rll: &CMatrix,
    rle: &CMatrix,
    rlsls: &CMatrix,
    rlses: &CMatrix,
    policy: &RankPolicy,
) -> Result<f64> {
    ensure_shape(rlses, rle.nrows(), rle.ncols(), "R_lses")?;
    ensure_shape(rlsls, rll.nrows(), rll.ncols(), "R_lsls")?;
    let lhs = rlsls * pseudo_inverse(rll, policy)? * rle;
    let dev = frobenius(&(lhs - rlses));
    let scale = frobenius(rlses);
    Ok(if scale > 0.0 { dev / scale } else { dev })
}
