//! Numerical certificates for the closed-form filters on exactly known
//! single-bin models.
//!
//! A [`SyntheticModel`] describes one frequency bin through mixing matrices
//! and source powers. [`exact_correlations`] turns it into correlation
//! matrices without sampling noise, [`equivalence_suite`] compares the
//! extended filters on one model and [`supplementary_suite`] runs the block
//! identities over many random draws.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::filters::{
    aec_nr, additive_map_residual, mwf_ext, nr_aec, nrext_aec_lin, nrext_aec_pf,
    wiener_hopf_residual,
};
use crate::linalg::{
    assemble_2x2, c64, check_generalized_inverse_conditions, extended_generalized_inverse,
    frobenius, hermitian_part, identity, pseudo_inverse, pseudo_inverse_scaled, spectral_norm,
    theorem1_identity_check, CMatrix, RankPolicy,
};

/// Largest additive-map residual for which NRext-AEC-PF is compared.
pub const ADDITIVE_MAP_TOLERANCE: f64 = 1e-8;
/// Tolerance on filter identities and Wiener–Hopf residuals.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;
/// Tolerance on the reassembled block factorizations.
pub const FACTORIZATION_TOLERANCE: f64 = 1e-10;

/// Uncorrelated sources entering through the columns of `mixing`, each with
/// the power in `psd`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGroup {
    pub mixing: CMatrix,
    pub psd: Vec<f64>,
}

impl SourceGroup {
    pub fn new(mixing: CMatrix, psd: Vec<f64>) -> Result<Self> {
        let g = Self { mixing, psd };
        g.validate()?;
        Ok(g)
    }

    pub fn silent(channels: usize) -> Self {
        Self {
            mixing: CMatrix::zeros(channels, 0),
            psd: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.mixing.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.mixing.ncols() != self.psd.len() {
            return Err(mismatch(format!(
                "{} mixing columns for {} source powers",
                self.mixing.ncols(),
                self.psd.len()
            )));
        }
        if self.psd.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("source powers must be finite and non-negative"));
        }
        if !crate::linalg::is_finite(&self.mixing) {
            return Err(invalid("mixing matrix has non-finite entries"));
        }
        Ok(())
    }

    /// `A diag(psd) A^H`.
    pub fn correlation(&self) -> CMatrix {
        let mut scaled = self.mixing.clone();
        for (mut col, &p) in scaled.column_iter_mut().zip(&self.psd) {
            col *= c64(p, 0.0);
        }
        hermitian_part(&(scaled * self.mixing.adjoint()))
    }

    fn sample(&self, frames: usize, rng: &mut impl Rng) -> CMatrix {
        let src = CMatrix::from_fn(self.psd.len(), frames, |i, _| {
            let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            c64(x, y).scale((self.psd[i] / 2.0).sqrt())
        });
        &self.mixing * src
    }
}

/// How the loudspeaker signals reach the microphones.
#[derive(Debug, Clone, PartialEq)]
pub enum EchoMap {
    /// `e = F l`.
    Linear(CMatrix),
    /// `e = F_s l^s + F_n l^n`.
    Additive { speech: CMatrix, noise: CMatrix },
}

impl EchoMap {
    fn speech(&self) -> &CMatrix {
        match self {
            EchoMap::Linear(f) => f,
            EchoMap::Additive { speech, .. } => speech,
        }
    }

    fn noise(&self) -> &CMatrix {
        match self {
            EchoMap::Linear(f) => f,
            EchoMap::Additive { noise, .. } => noise,
        }
    }
}

/// One frequency bin with `M` microphones and `L` loudspeakers.
///
/// The loudspeaker signal is `l = l^s + l^n` and the microphone signal is
/// `m = s + n + e`; all source groups are mutually uncorrelated.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub speech: SourceGroup,
    pub noise: SourceGroup,
    pub farend_speech: SourceGroup,
    pub farend_noise: SourceGroup,
    pub echo: EchoMap,
}

impl SyntheticModel {
    pub fn mics(&self) -> usize {
        self.speech.channels()
    }

    pub fn loudspeakers(&self) -> usize {
        self.farend_speech.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, l) = (self.mics(), self.loudspeakers());
        if m == 0 || l == 0 {
            return Err(invalid("model needs at least one microphone and loudspeaker"));
        }
        for g in [&self.speech, &self.noise, &self.farend_speech, &self.farend_noise] {
            g.validate()?;
        }
        if self.noise.channels() != m || self.farend_noise.channels() != l {
            return Err(mismatch("source groups disagree on channel counts"));
        }
        for f in [self.echo.speech(), self.echo.noise()] {
            if f.shape() != (m, l) {
                return Err(mismatch(format!(
                    "echo path must be {m}x{l}, got {}x{}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Random model with one speech source, `M` noise sources, `L` far-end
    /// speech and `L` far-end noise sources, and a shared linear echo path.
    pub fn random(rng: &mut impl Rng, m: usize, l: usize) -> Self {
        let group = |rng: &mut _, rows, cols| {
            let psd = (0..cols).map(|_| rng_range(rng, 0.5, 2.0)).collect();
            SourceGroup {
                mixing: random_matrix(rng, rows, cols),
                psd,
            }
        };
        let speech = group(rng, m, 1);
        let mut noise = group(rng, m, m);
        noise.psd.iter_mut().for_each(|p| *p *= 0.3);
        let farend_speech = group(rng, l, l);
        let mut farend_noise = group(rng, l, l);
        farend_noise.psd.iter_mut().for_each(|p| *p *= 0.3);
        Self {
            speech,
            noise,
            farend_speech,
            farend_noise,
            echo: EchoMap::Linear(random_matrix(rng, m, l)),
        }
    }

    /// [`SyntheticModel::random`] from a seeded generator.
    pub fn seeded(seed: u64, m: usize, l: usize) -> Self {
        Self::random(&mut ChaCha8Rng::seed_from_u64(seed), m, l)
    }

    /// Replaces the shared echo path by independent paths for far-end speech
    /// and far-end noise.
    pub fn with_independent_paths(mut self, rng: &mut impl Rng) -> Self {
        let (m, l) = (self.mics(), self.loudspeakers());
        self.echo = EchoMap::Additive {
            speech: random_matrix(rng, m, l),
            noise: random_matrix(rng, m, l),
        };
        self
    }

    /// Makes the last loudspeaker replay the first one, so `R_ll` loses rank.
    pub fn with_duplicated_loudspeaker(mut self) -> Result<Self> {
        let l = self.loudspeakers();
        if l < 2 {
            return Err(invalid("duplicating a loudspeaker needs L >= 2"));
        }
        for g in [&mut self.farend_speech, &mut self.farend_noise] {
            let first = g.mixing.row(0).into_owned();
            g.mixing.row_mut(l - 1).copy_from(&first);
        }
        Ok(self)
    }

    /// Draws `frames` realizations of every component, one column per frame.
    pub fn sample(&self, frames: usize, rng: &mut impl Rng) -> SampledComponents {
        let s = self.speech.sample(frames, rng);
        let n = self.noise.sample(frames, rng);
        let ls = self.farend_speech.sample(frames, rng);
        let ln = self.farend_noise.sample(frames, rng);
        SampledComponents {
            es: self.echo.speech() * &ls,
            en: self.echo.noise() * &ln,
            s,
            n,
            ls,
            ln,
        }
    }
}

/// Sampled components of a [`SyntheticModel`], `channels x frames`.
#[derive(Debug, Clone)]
pub struct SampledComponents {
    pub s: CMatrix,
    pub n: CMatrix,
    pub es: CMatrix,
    pub en: CMatrix,
    pub ls: CMatrix,
    pub ln: CMatrix,
}

impl SampledComponents {
    /// Stacked `[m; l]`.
    pub fn extended(&self) -> CMatrix {
        let mic = &self.s + &self.n + &self.es + &self.en;
        let ls = &self.ls + &self.ln;
        crate::linalg::vstack(&mic, &ls)
    }
}

/// Exact correlation matrices of a [`SyntheticModel`].
///
/// Cross-correlations follow the `E{l e^H}` convention, so `rle` is `L x M`.
#[derive(Debug, Clone)]
pub struct ExactCorrelations {
    pub rmm: CMatrix,
    pub rss: CMatrix,
    pub rnn: CMatrix,
    pub ree: CMatrix,
    pub reses: CMatrix,
    pub rll: CMatrix,
    pub rle: CMatrix,
    pub rlsls: CMatrix,
    pub rlses: CMatrix,
    /// `E{[m; l][m; l]^H}`.
    pub extended: CMatrix,
    /// `diag(R_ss, 0)`.
    pub speech_ext: CMatrix,
    /// Extended correlation of `[s + e^s; l^s]`.
    pub speech_plus_echo_ext: CMatrix,
}

pub fn exact_correlations(model: &SyntheticModel) -> Result<ExactCorrelations> {
    model.validate()?;
    let (m, l) = (model.mics(), model.loudspeakers());
    let (fs, fnn) = (model.echo.speech(), model.echo.noise());
    let rss = model.speech.correlation();
    let rnn = model.noise.correlation();
    let rlsls = model.farend_speech.correlation();
    let rlnln = model.farend_noise.correlation();
    let reses = hermitian_part(&(fs * &rlsls * fs.adjoint()));
    let ree = hermitian_part(&(&reses + fnn * &rlnln * fnn.adjoint()));
    let rll = &rlsls + &rlnln;
    let rlses = &rlsls * fs.adjoint();
    let rle = &rlses + &rlnln * fnn.adjoint();
    let rmm = hermitian_part(&(&rss + &rnn + &ree));
    let extended = assemble_2x2(&rmm, &rle.adjoint(), &rle, &rll);
    let speech_ext = assemble_2x2(
        &rss,
        &CMatrix::zeros(m, l),
        &CMatrix::zeros(l, m),
        &CMatrix::zeros(l, l),
    );
    let speech_plus_echo_ext = assemble_2x2(&(&rss + &reses), &rlses.adjoint(), &rlses, &rlsls);
    Ok(ExactCorrelations {
        rmm,
        rss,
        rnn,
        ree,
        reses,
        rll,
        rle,
        rlsls,
        rlses,
        extended,
        speech_ext,
        speech_plus_echo_ext,
    })
}

/// `||R_hat - R||_F / tr(R)` for the sample covariance of `frames` draws of
/// `[m; l]`. Its root-mean-square value is `1 / sqrt(frames)`.
pub fn monte_carlo_deviation(
    model: &SyntheticModel,
    frames: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if frames == 0 {
        return Err(invalid("at least one frame is needed"));
    }
    let exact = exact_correlations(model)?;
    let x = model.sample(frames, rng).extended();
    let sample = (&x * x.adjoint()).scale(1.0 / frames as f64);
    let trace = exact.extended.trace().re;
    Ok(frobenius(&(sample - &exact.extended)) / trace)
}

/// The extended filters compared by [`equivalence_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendedFilter {
    MwfExt,
    AecNr,
    NrAec,
    NrExtAecPf,
}

impl ExtendedFilter {
    pub const ALL: [ExtendedFilter; 4] = [
        ExtendedFilter::MwfExt,
        ExtendedFilter::AecNr,
        ExtendedFilter::NrAec,
        ExtendedFilter::NrExtAecPf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExtendedFilter::MwfExt => "MWFext",
            ExtendedFilter::AecNr => "AEC-NR",
            ExtendedFilter::NrAec => "NR-AEC",
            ExtendedFilter::NrExtAecPf => "NRext-AEC-PF",
        }
    }
}

/// Filter and Wiener–Hopf residual of one extended filter; `None` when the
/// model does not meet the filter's assumptions.
#[derive(Debug, Clone)]
pub struct EquivalenceEntry {
    pub filter_kind: ExtendedFilter,
    pub filter: Option<CMatrix>,
    pub wiener_hopf_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PairDeviation {
    pub a: ExtendedFilter,
    pub b: ExtendedFilter,
    /// `||w_a - w_b|| / max(||w_a||, ||w_b||)`.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub mics: usize,
    pub loudspeakers: usize,
    pub additive_map_residual: f64,
    pub entries: Vec<EquivalenceEntry>,
    pub deviations: Vec<PairDeviation>,
}

impl EquivalenceReport {
    pub fn entry(&self, kind: ExtendedFilter) -> &EquivalenceEntry {
        self.entries
            .iter()
            .find(|e| e.filter_kind == kind)
            .expect("every filter has an entry")
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations
            .iter()
            .filter_map(|d| d.deviation)
            .fold(0.0, f64::max)
    }

    pub fn max_wiener_hopf_residual(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.wiener_hopf_residual)
            .fold(0.0, f64::max)
    }

    /// One `key=value` line per quantity; not-applicable values print `NA`.
    pub fn to_key_values(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3e}"));
        let mut out = String::new();
        let _ = writeln!(out, "mics={}", self.mics);
        let _ = writeln!(out, "loudspeakers={}", self.loudspeakers);
        let _ = writeln!(out, "additive_map_residual={:.3e}", self.additive_map_residual);
        for e in &self.entries {
            let _ = writeln!(
                out,
                "wiener_hopf_residual.{}={}",
                e.filter_kind.name(),
                fmt(e.wiener_hopf_residual)
            );
        }
        for d in &self.deviations {
            let _ = writeln!(
                out,
                "deviation.{}.{}={}",
                d.a.name(),
                d.b.name(),
                fmt(d.deviation)
            );
        }
        out
    }
}

fn relative_deviation(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = frobenius(&(a - b));
    let scale = frobenius(a).max(frobenius(b));
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

/// Extended filters of `model` for reference microphone `r`, with their
/// Wiener–Hopf residuals against `R_ss` and all pairwise deviations.
pub fn equivalence_suite(
    model: &SyntheticModel,
    r: usize,
    policy: &RankPolicy,
) -> Result<EquivalenceReport> {
    let c = exact_correlations(model)?;
    let amr = additive_map_residual(&c.rll, &c.rle, &c.rlsls, &c.rlses, policy)?;
    let mut entries = Vec::with_capacity(4);
    for kind in ExtendedFilter::ALL {
        let filter = match kind {
            ExtendedFilter::MwfExt => {
                Some(mwf_ext(&c.rmm, &c.rll, &c.rle, &c.speech_ext, r, policy)?.filter)
            }
            ExtendedFilter::AecNr => Some(aec_nr(&c.rmm, &c.rll, &c.rle, &c.rss, r, policy)?.filter),
            ExtendedFilter::NrAec => {
                Some(nr_aec(&c.rmm, &c.rll, &c.rle, &c.rss, r, false, policy)?.filter)
            }
            ExtendedFilter::NrExtAecPf if amr <= ADDITIVE_MAP_TOLERANCE => Some(
                nrext_aec_pf(
                    &c.rmm,
                    &c.rll,
                    &c.rle,
                    &c.rss,
                    &c.speech_plus_echo_ext,
                    r,
                    policy,
                )?
                .filter,
            ),
            ExtendedFilter::NrExtAecPf => None,
        };
        let wiener_hopf_residual = filter
            .as_ref()
            .map(|w| wiener_hopf_residual(&c.extended, &c.speech_ext, w, r))
            .transpose()?;
        entries.push(EquivalenceEntry {
            filter_kind: kind,
            filter,
            wiener_hopf_residual,
        });
    }
    let mut deviations = Vec::new();
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let deviation = match (&a.filter, &b.filter) {
                (Some(x), Some(y)) => Some(relative_deviation(x, y)),
                _ => None,
            };
            deviations.push(PairDeviation {
                a: a.filter_kind,
                b: b.filter_kind,
                deviation,
            });
        }
    }
    Ok(EquivalenceReport {
        mics: model.mics(),
        loudspeakers: model.loudspeakers(),
        additive_map_residual: amr,
        entries,
        deviations,
    })
}

/// Identities checked by [`supplementary_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    /// `R = [[I, R_el R_ll^†], [0, I]] diag(Σ, R_ll) [[I, 0], [R_ll^† R_le, I]]`.
    ExtendedFactorization,
    /// The block generalized inverse equals
    /// `[[I, 0], [-R_ll^† R_le, I]] diag(Σ^†, R_ll^†) [[I, -R_el R_ll^†], [0, I]]`.
    InverseFactorization,
    /// Condition `1..=4` with a full-rank Schur complement.
    Condition(u8),
    /// Condition `1..=4` with a rank-deficient Schur complement.
    RankDeficientCondition(u8),
    /// `(ABA)^† ABC = A^† C` for nested column spaces.
    NestedPseudoInverse,
    /// NRext-AEC-PF equals the extended MWF for a full-rank Schur complement.
    NrExtMatchesMwfExt,
    /// The linear-echo NRext-AEC equals NRext-AEC-PF under a linear echo path.
    LinearSimplification,
}

impl Claim {
    pub fn name(self) -> String {
        match self {
            Claim::ExtendedFactorization => "extended_factorization".into(),
            Claim::InverseFactorization => "inverse_factorization".into(),
            Claim::Condition(i) => format!("condition_{i}"),
            Claim::RankDeficientCondition(i) => format!("rank_deficient_condition_{i}"),
            Claim::NestedPseudoInverse => "nested_pseudo_inverse".into(),
            Claim::NrExtMatchesMwfExt => "nrext_matches_mwfext".into(),
            Claim::LinearSimplification => "linear_simplification".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    /// The residual stays within tolerance.
    Holds,
    /// The residual exceeds the tolerance.
    Fails,
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub claim: Claim,
    pub mics: usize,
    pub loudspeakers: usize,
    pub seed: u64,
    pub residual: f64,
    pub tolerance: f64,
    pub expectation: Expectation,
    pub passed: bool,
}

impl Certificate {
    fn new(
        claim: Claim,
        (mics, loudspeakers, seed): (usize, usize, u64),
        residual: f64,
        tolerance: f64,
        expectation: Expectation,
    ) -> Self {
        let within = residual <= tolerance;
        Self {
            claim,
            mics,
            loudspeakers,
            seed,
            residual,
            tolerance,
            expectation,
            passed: within == (expectation == Expectation::Holds),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SupplementaryReport {
    pub certificates: Vec<Certificate>,
}

impl SupplementaryReport {
    pub fn all_passed(&self) -> bool {
        self.certificates.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.iter().filter(|c| !c.passed)
    }

    /// Worst residual per claim name among certificates expected to hold.
    pub fn summary(&self) -> Vec<(String, usize, usize, f64)> {
        let mut out: Vec<(String, usize, usize, f64)> = Vec::new();
        for c in &self.certificates {
            let name = c.claim.name();
            let idx = match out.iter().position(|row| row.0 == name) {
                Some(i) => i,
                None => {
                    out.push((name, 0, 0, 0.0));
                    out.len() - 1
                }
            };
            let row = &mut out[idx];
            row.1 += 1;
            row.2 += usize::from(c.passed);
            if c.expectation == Expectation::Holds {
                row.3 = row.3.max(c.residual);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("claim,mics,loudspeakers,seed,residual,tolerance,expect,passed\n");
        for c in &self.certificates {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3e},{:.0e},{},{}",
                c.claim.name(),
                c.mics,
                c.loudspeakers,
                c.seed,
                c.residual,
                c.tolerance,
                match c.expectation {
                    Expectation::Holds => "holds",
                    Expectation::Fails => "fails",
                },
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Runs every [`Claim`] once per `(M, L)` size and seed.
pub fn supplementary_suite(sizes: &[(usize, usize)], seeds: &[u64]) -> Result<SupplementaryReport> {
    if let Some(&(m, l)) = sizes.iter().find(|(m, l)| *m == 0 || *l == 0) {
        return Err(invalid(format!("invalid size M={m}, L={l}")));
    }
    let jobs: Vec<(usize, usize, u64)> = sizes
        .iter()
        .flat_map(|&(m, l)| seeds.iter().map(move |&s| (m, l, s)))
        .collect();
    let per_job: Vec<Vec<Certificate>> = jobs
        .into_par_iter()
        .map(|job| trial(job, &RankPolicy::default()))
        .collect::<Result<_>>()?;
    Ok(SupplementaryReport {
        certificates: per_job.into_iter().flatten().collect(),
    })
}

fn trial(job: (usize, usize, u64), policy: &RankPolicy) -> Result<Vec<Certificate>> {
    let (m, l, seed) = job;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((m * 64 + l) as u64);
    let mut out = Vec::new();

    let rank_l = 1 + rng.random_range(0..l);
    let (rmm, rll, rle) = extended_model(&mut rng, m, l, rank_l, m);
    let (fact, inv) = factorization_residuals(&rmm, &rll, &rle, policy)?;
    out.push(Certificate::new(
        Claim::ExtendedFactorization,
        job,
        fact,
        FACTORIZATION_TOLERANCE,
        Expectation::Holds,
    ));
    out.push(Certificate::new(
        Claim::InverseFactorization,
        job,
        inv,
        FACTORIZATION_TOLERANCE,
        Expectation::Holds,
    ));
    let full = assemble_2x2(&rmm, &rle.adjoint(), &rle, &rll);
    let g = extended_generalized_inverse(&rmm, &rll, &rle, policy)?;
    let rep = check_generalized_inverse_conditions(&full, &g)?;
    for (i, &res) in rep.residuals.iter().enumerate() {
        out.push(Certificate::new(
            Claim::Condition(i as u8 + 1),
            job,
            res,
            IDENTITY_TOLERANCE,
            Expectation::Holds,
        ));
    }

    let (rmm, rll, rle) = extended_model(&mut rng, m, l, l, m - 1);
    let full = assemble_2x2(&rmm, &rle.adjoint(), &rle, &rll);
    let g = extended_generalized_inverse(&rmm, &rll, &rle, policy)?;
    let rep = check_generalized_inverse_conditions(&full, &g)?;
    for (i, &res) in rep.residuals.iter().enumerate() {
        let expectation = if i < 2 {
            Expectation::Holds
        } else {
            Expectation::Fails
        };
        out.push(Certificate::new(
            Claim::RankDeficientCondition(i as u8 + 1),
            job,
            res,
            IDENTITY_TOLERANCE,
            expectation,
        ));
    }

    let (a, b, c) = nested_triple(&mut rng, m, l);
    out.push(Certificate::new(
        Claim::NestedPseudoInverse,
        job,
        theorem1_identity_check(&a, &b, &c, policy)?,
        IDENTITY_TOLERANCE,
        Expectation::Holds,
    ));

    let model = SyntheticModel::random(&mut rng, m, l);
    let ex = exact_correlations(&model)?;
    let pf = nrext_aec_pf(
        &ex.rmm,
        &ex.rll,
        &ex.rle,
        &ex.rss,
        &ex.speech_plus_echo_ext,
        0,
        policy,
    )?
    .filter;
    let ext = mwf_ext(&ex.rmm, &ex.rll, &ex.rle, &ex.speech_ext, 0, policy)?.filter;
    out.push(Certificate::new(
        Claim::NrExtMatchesMwfExt,
        job,
        relative_deviation(&pf, &ext),
        IDENTITY_TOLERANCE,
        Expectation::Holds,
    ));
    let EchoMap::Linear(f) = &model.echo else {
        unreachable!("random models use a shared linear path")
    };
    let lin = nrext_aec_lin(
        &ex.rmm,
        &ex.rll,
        &ex.rle,
        &ex.rlsls,
        f,
        &ex.speech_plus_echo_ext,
        0,
        policy,
    )?
    .filter;
    out.push(Certificate::new(
        Claim::LinearSimplification,
        job,
        relative_deviation(&lin, &pf),
        IDENTITY_TOLERANCE,
        Expectation::Holds,
    ));
    Ok(out)
}

/// Relative residuals of the two block factorizations.
fn factorization_residuals(
    rmm: &CMatrix,
    rll: &CMatrix,
    rle: &CMatrix,
    policy: &RankPolicy,
) -> Result<(f64, f64)> {
    let (m, l) = (rmm.nrows(), rll.nrows());
    let rel = rle.adjoint();
    let rll_pinv = pseudo_inverse(rll, policy)?;
    let sigma = hermitian_part(&(rmm - &rel * &rll_pinv * rle));
    let sigma_pinv = pseudo_inverse_scaled(&sigma, policy, spectral_norm(rmm))?;
    let (zml, zlm) = (CMatrix::zeros(m, l), CMatrix::zeros(l, m));
    let (im, il) = (identity(m), identity(l));
    let k = &rll_pinv * rle;

    let upper = assemble_2x2(&im, &k.adjoint(), &zlm, &il);
    let lower = assemble_2x2(&im, &zml, &k, &il);
    let middle = assemble_2x2(&sigma, &zml, &zlm, rll);
    let full = assemble_2x2(rmm, &rel, rle, rll);
    let fact = relative_deviation(&(&upper * middle * &lower), &full);

    let left = assemble_2x2(&im, &zml, &-&k, &il);
    let right = assemble_2x2(&im, &-k.adjoint(), &zlm, &il);
    let middle = assemble_2x2(&sigma_pinv, &zml, &zlm, &rll_pinv);
    let g = extended_generalized_inverse(rmm, rll, rle, policy)?;
    let inv = relative_deviation(&(left * middle * right), &g);
    Ok((fact, inv))
}

/// `[m; l]` blocks with `m = F l + v`, `rank(R_ll) = rank_l` and
/// `rank(R_vv) = rank_v`, so the Schur complement is `R_vv`.
fn extended_model(
    rng: &mut impl Rng,
    m: usize,
    l: usize,
    rank_l: usize,
    rank_v: usize,
) -> (CMatrix, CMatrix, CMatrix) {
    let rll = conditioned_psd(rng, l, rank_l);
    let f = random_matrix(rng, m, l);
    let rvv = conditioned_psd(rng, m, rank_v);
    let rmm = hermitian_part(&(&f * &rll * f.adjoint() + rvv));
    let rle = &rll * f.adjoint();
    (rmm, rll, rle)
}

/// `A`, `B` Hermitian PSD with `col(A) ⊆ col(B)`, and `C = A X` of width `k`.
fn nested_triple(rng: &mut impl Rng, n: usize, k: usize) -> (CMatrix, CMatrix, CMatrix) {
    let rank_a = 1 + rng.random_range(0..n);
    let rank_b = rank_a + rng.random_range(0..=n - rank_a);
    let q = random_matrix(rng, n, n).qr().q();
    let weights = |rng: &mut _, r| -> Vec<f64> { (0..r).map(|_| rng_range(rng, 0.2, 1.0)).collect() };
    let ua = q.columns(0, rank_a).into_owned();
    let ub = q.columns(0, rank_b).into_owned();
    let a = SourceGroup {
        mixing: ua,
        psd: weights(rng, rank_a),
    }
    .correlation();
    // mixing B's eigenvectors keeps its column space while decoupling it from A's
    let mix = random_matrix(rng, rank_b, rank_b) + identity(rank_b).scale(2.0);
    let b = SourceGroup {
        mixing: &ub * mix,
        psd: weights(rng, rank_b),
    }
    .correlation();
    let c = &a * random_matrix(rng, n, k);
    (a, b, c)
}

fn rng_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Entries with real and imaginary parts uniform in `[-1, 1)`.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// PSD matrix of the given rank with nonzero eigenvalues in `[0.2, 1)`.
fn conditioned_psd(rng: &mut impl Rng, n: usize, rank: usize) -> CMatrix {
    let q = random_matrix(rng, n, n).qr().q();
    SourceGroup {
        mixing: q.columns(0, rank).into_owned(),
        psd: (0..rank).map(|_| rng_range(rng, 0.2, 1.0)).collect(),
    }
    .correlation()
}
