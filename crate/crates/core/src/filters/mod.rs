//! Enhancement filters: closed forms from correlation matrices and staged
//! cascades that feed processed signals from one stage to the next.

mod cascade;
mod closed;

pub use cascade::{
    bundle_components, echo_path_response, reference_vad, run_cascade, CascadeOptions,
    CascadeOutput, Components, PfSpeechEstimate, StageSignals, Transport,
};
pub use closed::{
    additive_map_residual, aec_nr, aec_nr_lin, mwf, mwf_ext, nr_aec, nrext_aec_lin, nrext_aec_pf,
    wiener_hopf_residual, BinFilter,
};

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::linalg::CMatrix;
use crate::stft::StftTensor;

/// The benchmarked algorithms and their linear-echo variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmKind {
    Mwf,
    MwfExt,
    AecNr,
    /// NR-AEC with the NR computed from the microphone correlation.
    NrAecMod,
    NrExtAecPf,
    AecNrLin,
    NrExtAecLin,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 7] = [
        AlgorithmKind::Mwf,
        AlgorithmKind::MwfExt,
        AlgorithmKind::AecNr,
        AlgorithmKind::NrAecMod,
        AlgorithmKind::NrExtAecPf,
        AlgorithmKind::AecNrLin,
        AlgorithmKind::NrExtAecLin,
    ];

    /// Algorithms that need no knowledge of the true echo path.
    pub const GENERAL: [AlgorithmKind; 5] = [
        AlgorithmKind::Mwf,
        AlgorithmKind::MwfExt,
        AlgorithmKind::AecNr,
        AlgorithmKind::NrAecMod,
        AlgorithmKind::NrExtAecPf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Mwf => "MWF",
            AlgorithmKind::MwfExt => "MWFext",
            AlgorithmKind::AecNr => "AEC-NR",
            AlgorithmKind::NrAecMod => "NR-AEC-mod",
            AlgorithmKind::NrExtAecPf => "NRext-AEC-PF",
            AlgorithmKind::AecNrLin => "AEC-NR-lin",
            AlgorithmKind::NrExtAecLin => "NRext-AEC-lin",
        }
    }

    /// Whether the true per-bin echo path is required.
    pub fn needs_echo_path(self) -> bool {
        matches!(self, AlgorithmKind::AecNrLin | AlgorithmKind::NrExtAecLin)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                invalid(format!("unknown algorithm '{s}', expected one of {names:?}"))
            })
    }
}

/// Role of a stage in a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Aec,
    Nr,
    NrExt,
    Pf,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Aec => "AEC",
            StageKind::Nr => "NR",
            StageKind::NrExt => "NRext",
            StageKind::Pf => "PF",
        }
    }
}

/// Per-bin matrices of one stage. A stage maps its input vector `x` to
/// `W^H x`, so the matrices are `input_dim x output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub kind: StageKind,
    pub matrices: Vec<CMatrix>,
}

/// Per-bin overall filter of an algorithm together with its stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSolution {
    pub kind: AlgorithmKind,
    /// `input_dim x 1` per bin; the enhanced output is `w^H x`.
    pub filters: Vec<CMatrix>,
    pub stages: Vec<Stage>,
}

impl FilterSolution {
    /// Assembles a solution from per-bin closed forms.
    pub fn from_bins(kind: AlgorithmKind, bins: Vec<BinFilter>) -> Result<Self> {
        let n_stages = bins.first().map_or(0, |b| b.stages.len());
        let mut stages: Vec<Stage> = bins
            .first()
            .map(|b| {
                b.stages
                    .iter()
                    .map(|(k, _)| Stage {
                        kind: *k,
                        matrices: Vec::with_capacity(bins.len()),
                    })
                    .collect()
            })
            .unwrap_or_default();
        let mut filters = Vec::with_capacity(bins.len());
        for b in bins {
            if b.stages.len() != n_stages {
                return Err(mismatch("bins have different stage layouts"));
            }
            for (stage, (_, m)) in stages.iter_mut().zip(b.stages) {
                stage.matrices.push(m);
            }
            filters.push(b.filter);
        }
        let sol = Self {
            kind,
            filters,
            stages,
        };
        sol.validate()?;
        Ok(sol)
    }

    pub fn bins(&self) -> usize {
        self.filters.len()
    }

    pub fn input_dim(&self) -> usize {
        self.filters.first().map_or(0, CMatrix::nrows)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        for (f, w) in self.filters.iter().enumerate() {
            if w.shape() != (d, 1) {
                return Err(mismatch(format!(
                    "bin {f}: filter is {}x{}, expected {d}x1",
                    w.nrows(),
                    w.ncols()
                )));
            }
            if !crate::linalg::is_finite(w) {
                return Err(invalid(format!("bin {f}: filter has non-finite entries")));
            }
        }
        for s in &self.stages {
            if s.matrices.len() != self.filters.len() {
                return Err(mismatch(format!(
                    "{} stage has {} bins, filter has {}",
                    s.kind.name(),
                    s.matrices.len(),
                    self.filters.len()
                )));
            }
        }
        Ok(())
    }
}

/// `y(k, f) = W(f)^H x(k, f)` for every frame; the output has as many
/// channels as `W` has columns.
pub fn apply_matrices(matrices: &[CMatrix], t: &StftTensor) -> Result<StftTensor> {
    if matrices.len() != t.bins() {
        return Err(mismatch(format!(
            "{} filter bins for a spectrogram with {} bins",
            matrices.len(),
            t.bins()
        )));
    }
    let d_in = t.channels();
    let d_out = matrices.first().map_or(0, CMatrix::ncols);
    if let Some(bad) = matrices.iter().find(|w| w.shape() != (d_in, d_out)) {
        return Err(mismatch(format!(
            "filter is {}x{}, expected {d_in}x{d_out}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let frames = t.frames();
    let mut out = StftTensor::zeros(*t.config(), frames, d_out, t.signal_len());
    out.bin_chunks_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .for_each(|(f, chunk)| {
            let wh = matrices[f].adjoint();
            let x = t.bin_slice(f);
            for k in 0..frames {
                let xv = &x[k * d_in..(k + 1) * d_in];
                for o in 0..d_out {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..d_in {
                        acc += wh[(o, i)] * xv[i];
                    }
                    chunk[k * d_out + o] = acc;
                }
            }
        });
    Ok(out)
}

/// Single-channel enhanced spectrogram `w(f)^H x(k, f)`.
pub fn apply_per_bin(solution: &FilterSolution, t: &StftTensor) -> Result<StftTensor> {
    apply_matrices(&solution.filters, t)
}
