//! Staged cascades: every stage estimates its correlations from the signals
//! produced by the previous stage, filters them and passes them on.
//!
//! Signals are carried as four additive components so that the enhanced
//! output can be decomposed exactly for the metrics.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{apply_matrices, AlgorithmKind, FilterSolution, Stage, StageKind};
use crate::error::{invalid, mismatch, Error, Result};
use crate::estimation::{
    cross_correlations, estimate_extended_speech_plus_echo, estimate_rss, ideal_vad, Regime,
    CrossBlocks, SpectralCorrelationSet, VadTrack, DEFAULT_VAD_THRESHOLD_DB,
};
use crate::linalg::{
    assemble_2x2, block, extended_generalized_inverse, gevd_lowrank_subtract, gevd_pencil,
    identity, pseudo_inverse, selection_vector, vstack, CMatrix, RankPolicy,
};
use crate::room::ScenarioBundle;
use crate::stft::{analyze, synthesize, StftConfig, StftTensor};

/// How stage outputs reach the next stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Synthesize to the time domain and analyze again.
    TimeDomain,
    /// Keep the STFT coefficients.
    Spectral,
}

/// Source of the post-filter's desired-speech cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfSpeechEstimate {
    /// Cross-correlation of the post-filter input with the unprocessed
    /// microphones, regime (1,1) minus regime (0,1), projected on the
    /// dominant generalized eigenvectors.
    Subtraction,
    /// Low-rank speech correlation of the post-filter input multiplied by the
    /// inverse of the microphone block of the NR_ext filter.
    InverseNr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOptions {
    pub stft: StftConfig,
    /// GEVD rank of the desired speech correlation.
    pub speech_rank: usize,
    /// GEVD rank of the extended speech-plus-echo correlation; defaults to
    /// `speech_rank + L`.
    pub extended_rank: Option<usize>,
    pub vad_threshold_db: f64,
    pub transport: Transport,
    pub pf_speech_estimate: PfSpeechEstimate,
    pub policy: RankPolicy,
    /// Keep the time-domain output of every stage.
    pub keep_stage_signals: bool,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            speech_rank: 1,
            extended_rank: None,
            vad_threshold_db: DEFAULT_VAD_THRESHOLD_DB,
            transport: Transport::TimeDomain,
            pf_speech_estimate: PfSpeechEstimate::Subtraction,
            policy: RankPolicy::default(),
            keep_stage_signals: true,
        }
    }
}

/// Additive parts of a signal: desired speech, near-end noise, far-end
/// speech echo and far-end noise echo. Loudspeaker channels carry zero speech
/// and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Components<T> {
    pub speech: T,
    pub noise: T,
    pub echo_speech: T,
    pub echo_noise: T,
}

impl<T> Components<T> {
    pub fn try_map<U>(&self, f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Components<U>>
    where
        T: Sync,
        U: Send,
    {
        let parts: Vec<U> = [&self.speech, &self.noise, &self.echo_speech, &self.echo_noise]
            .into_par_iter()
            .map(f)
            .collect::<Result<_>>()?;
        let [speech, noise, echo_speech, echo_noise]: [U; 4] = parts
            .try_into()
            .map_err(|_| invalid("component count"))?;
        Ok(Components {
            speech,
            noise,
            echo_speech,
            echo_noise,
        })
    }
}

fn add_signals(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl Components<Vec<f64>> {
    pub fn echo(&self) -> Vec<f64> {
        add_signals(&self.echo_speech, &self.echo_noise)
    }

    /// Sum of all components.
    pub fn mixture(&self) -> Vec<f64> {
        let sn = add_signals(&self.speech, &self.noise);
        add_signals(&sn, &self.echo())
    }
}

impl Components<StftTensor> {
    fn mixture(&self) -> Result<StftTensor> {
        self.speech
            .add(&self.noise)?
            .add(&self.echo_speech)?
            .add(&self.echo_noise)
    }

    fn channels(&self) -> usize {
        self.speech.channels()
    }
}

/// Time-domain output of one cascade stage, `channels x samples` per component.
#[derive(Debug, Clone)]
pub struct StageSignals {
    pub kind: StageKind,
    pub components: Components<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub kind: AlgorithmKind,
    pub solution: FilterSolution,
    /// Enhanced reference-channel components.
    pub output: Components<Vec<f64>>,
    /// Unprocessed reference-microphone components passed through the
    /// analysis-synthesis filterbank, aligned with `output`.
    pub reference: Components<Vec<f64>>,
    /// Per-stage outputs; empty unless requested.
    pub stages: Vec<StageSignals>,
    pub vad: VadTrack,
}

impl CascadeOutput {
    pub fn enhanced(&self) -> Vec<f64> {
        self.output.mixture()
    }
}

/// Extended `[m; l]` components of a scenario.
pub fn bundle_components(bundle: &ScenarioBundle) -> Components<Vec<Vec<f64>>> {
    let zeros = vec![vec![0.0; bundle.len()]; bundle.loudspeakers()];
    let ext = |mic: &[Vec<f64>], ls: &[Vec<f64>]| -> Vec<Vec<f64>> {
        mic.iter().chain(ls).cloned().collect()
    };
    Components {
        speech: ext(&bundle.s, &zeros),
        noise: ext(&bundle.n, &zeros),
        echo_speech: ext(&bundle.e_s, &bundle.l_s),
        echo_noise: ext(&bundle.e_n, &bundle.l_n),
    }
}

/// Ideal VADs from the reference microphone's desired speech and far-end
/// speech echo. Without any echo the far-end VAD is active everywhere, so
/// speech-free frames fall into the regime whose statistics are subtracted.
pub fn reference_vad(
    bundle: &ScenarioBundle,
    stft: &StftConfig,
    threshold_db: f64,
) -> Result<VadTrack> {
    let r = bundle.reference_mic;
    let (s, es) = (&bundle.s[r], &bundle.e_s[r]);
    let vad = ideal_vad(s, es, stft, threshold_db)?;
    if es.iter().all(|&v| v == 0.0) {
        let frames = vad.frames();
        return VadTrack::from_flags(vad.speech.clone(), vec![true; frames], threshold_db);
    }
    Ok(vad)
}

/// Per-bin `M x L` transfer matrix of FIR echo paths `irs[mic][loudspeaker]`.
pub fn echo_path_response(irs: &[Vec<Vec<f64>>], stft: &StftConfig) -> Result<Vec<CMatrix>> {
    let m = irs.len();
    let l = irs.first().map_or(0, Vec::len);
    if m == 0 || l == 0 || irs.iter().any(|row| row.len() != l) {
        return Err(mismatch("echo paths must form a full microphone-by-loudspeaker grid"));
    }
    let n = stft.window_length as f64;
    Ok((0..stft.bins())
        .map(|f| {
            CMatrix::from_fn(m, l, |i, j| {
                irs[i][j]
                    .iter()
                    .enumerate()
                    .map(|(t, &h)| {
                        Complex64::from_polar(h, -2.0 * std::f64::consts::PI * (f * t) as f64 / n)
                    })
                    .sum()
            })
        })
        .collect())
}

fn per_bin<T: Send>(bins: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..bins).into_par_iter().map(f).collect()
}

struct Runner<'a> {
    opts: &'a CascadeOptions,
    vad: VadTrack,
    /// No far-end speech reaches the reference microphone.
    echo_free: bool,
    stages: Vec<Stage>,
    signals: Vec<StageSignals>,
}

impl Runner<'_> {
    fn policy(&self) -> &RankPolicy {
        &self.opts.policy
    }

    fn correlations(&self, state: &Components<StftTensor>) -> Result<SpectralCorrelationSet> {
        SpectralCorrelationSet::accumulate(&state.mixture()?, &self.vad)
    }

    /// Filters every component with `matrices` and hands the result to the
    /// next stage.
    fn advance(
        &mut self,
        kind: StageKind,
        state: &Components<StftTensor>,
        matrices: Vec<CMatrix>,
    ) -> Result<Components<StftTensor>> {
        let filtered = state.try_map(|t| apply_matrices(&matrices, t))?;
        let needs_time =
            self.opts.keep_stage_signals || self.opts.transport == Transport::TimeDomain;
        let next = if needs_time {
            let time = filtered.try_map(|t| synthesize(t, &self.opts.stft))?;
            let next = match self.opts.transport {
                Transport::TimeDomain => time.try_map(|x| analyze(x, &self.opts.stft))?,
                Transport::Spectral => filtered,
            };
            if self.opts.keep_stage_signals {
                self.signals.push(StageSignals {
                    kind,
                    components: time,
                });
            }
            next
        } else {
            filtered
        };
        self.stages.push(Stage { kind, matrices });
        Ok(next)
    }

    /// Passes unfiltered signals through the inter-stage transport.
    fn round_trip(&self, x: Components<StftTensor>) -> Result<Components<StftTensor>> {
        match self.opts.transport {
            Transport::Spectral => Ok(x),
            Transport::TimeDomain => x.try_map(|t| analyze(&synthesize(t, &self.opts.stft)?, &self.opts.stft)),
        }
    }

    /// `pinv(Σ) R_ss t_r` per bin from the stage input's own statistics.
    fn wiener_column(
        &self,
        set: &SpectralCorrelationSet,
        r: usize,
        context: &str,
    ) -> Result<Vec<CMatrix>> {
        set.require(Regime::SpeechEcho, context)?;
        let rss = estimate_rss(set, self.opts.speech_rank, self.policy())?;
        let d = set.rows();
        per_bin(set.bins(), |f| {
            let sigma = set.mean(f, Regime::SpeechEcho)?;
            Ok(pseudo_inverse(&sigma, self.policy())? * &rss[f] * selection_vector(d, r))
        })
    }

    /// `[I; -pinv(R_ll) X]` with `X` computed per bin from the regime-(0,1)
    /// loudspeaker blocks.
    fn aec_matrices(
        &self,
        set: &SpectralCorrelationSet,
        mics: usize,
        rhs: impl Fn(usize, &CrossBlocks) -> CMatrix + Sync + Send,
    ) -> Result<Vec<CMatrix>> {
        let cross = cross_correlations(set, mics)?;
        per_bin(set.bins(), |f| {
            let c = &cross[f];
            let a = pseudo_inverse(&c.rll, self.policy())? * rhs(f, c);
            Ok(vstack(&identity(mics), &-a))
        })
    }

    fn nrext(
        &mut self,
        ext: &Components<StftTensor>,
        mics: usize,
    ) -> Result<Components<StftTensor>> {
        let set = self.correlations(ext)?;
        set.require(Regime::SpeechEcho, "NR_ext")?;
        let l = set.rows() - mics;
        let rank = self.opts.extended_rank.unwrap_or(self.opts.speech_rank + l);
        // without echo the target is the extended speech correlation, and the
        // far-end VAD is active everywhere
        let target = if self.echo_free {
            estimate_rss(&set, rank, self.policy())?
        } else {
            estimate_extended_speech_plus_echo(&set, rank, self.policy())?
        };
        let w = per_bin(set.bins(), |f| {
            let r11 = set.mean(f, Regime::SpeechEcho)?;
            let g = extended_generalized_inverse(
                &block(&r11, 0, 0, mics, mics),
                &block(&r11, mics, mics, l, l),
                &block(&r11, mics, 0, l, mics),
                self.policy(),
            )?;
            let mut w = g * &target[f];
            w.view_mut((0, mics), (mics, l)).fill(Complex64::new(0.0, 0.0));
            Ok(w)
        })?;
        self.advance(StageKind::NrExt, ext, w)
    }
}

/// Runs one algorithm as a cascade on a scenario.
pub fn run_cascade(
    kind: AlgorithmKind,
    bundle: &ScenarioBundle,
    opts: &CascadeOptions,
) -> Result<CascadeOutput> {
    let mics = bundle.mics();
    let ls = bundle.loudspeakers();
    let r = bundle.reference_mic;
    if mics == 0 || ls == 0 || r >= mics {
        return Err(invalid("scenario needs microphones, loudspeakers and a valid reference"));
    }
    if (opts.stft.sample_rate - bundle.sample_rate).abs() > 1e-9 {
        return Err(invalid(format!(
            "filterbank rate {} differs from scenario rate {}",
            opts.stft.sample_rate, bundle.sample_rate
        )));
    }
    if opts.speech_rank == 0 || opts.speech_rank > mics {
        return Err(invalid(format!(
            "speech rank {} must lie in 1..={mics}",
            opts.speech_rank
        )));
    }
    let vad = reference_vad(bundle, &opts.stft, opts.vad_threshold_db)?;
    let echo_free = bundle.e_s[r].iter().all(|&v| v == 0.0);
    let ext = bundle_components(bundle).try_map(|x| analyze(x, &opts.stft))?;
    let mic_channels: Vec<usize> = (0..mics).collect();
    let mic = ext.try_map(|t| t.select_channels(&mic_channels))?;
    let reference = mic.try_map(|t| {
        let mut y = synthesize(&t.select_channels(&[r])?, &opts.stft)?;
        Ok(y.swap_remove(0))
    })?;
    let echo_path = if kind.needs_echo_path() {
        Some(echo_path_response(&bundle.echo_irs, &opts.stft)?)
    } else {
        None
    };

    let mut run = Runner {
        opts,
        vad,
        echo_free,
        stages: Vec::new(),
        signals: Vec::new(),
    };
    let out = match kind {
        AlgorithmKind::Mwf => {
            let set = run.correlations(&mic)?;
            let w = run.wiener_column(&set, r, "MWF")?;
            run.advance(StageKind::Nr, &mic, w)?
        }
        AlgorithmKind::MwfExt => {
            let set = run.correlations(&ext)?;
            set.require(Regime::SpeechEcho, "MWF_ext")?;
            let rss = estimate_rss(&set, opts.speech_rank, run.policy())?;
            let w = per_bin(set.bins(), |f| {
                let r11 = set.mean(f, Regime::SpeechEcho)?;
                let g = extended_generalized_inverse(
                    &block(&r11, 0, 0, mics, mics),
                    &block(&r11, mics, mics, ls, ls),
                    &block(&r11, mics, 0, ls, mics),
                    run.policy(),
                )?;
                Ok(g * &rss[f] * selection_vector(mics + ls, r))
            })?;
            run.advance(StageKind::NrExt, &ext, w)?
        }
        AlgorithmKind::AecNr | AlgorithmKind::AecNrLin => {
            let set = run.correlations(&ext)?;
            let aec = match &echo_path {
                Some(fl) => run.aec_matrices(&set, mics, |f, c| &c.rll * fl[f].adjoint())?,
                None => run.aec_matrices(&set, mics, |_, c| c.rle.clone())?,
            };
            let cleaned = run.advance(StageKind::Aec, &ext, aec)?;
            let set = run.correlations(&cleaned)?;
            let w = run.wiener_column(&set, r, "NR after AEC")?;
            run.advance(StageKind::Nr, &cleaned, w)?
        }
        AlgorithmKind::NrAecMod => {
            let set = run.correlations(&mic)?;
            let w = run.wiener_column(&set, r, "NR")?;
            let nr: Vec<CMatrix> = w
                .iter()
                .map(|w| {
                    assemble_2x2(
                        w,
                        &CMatrix::zeros(mics, ls),
                        &CMatrix::zeros(ls, 1),
                        &identity(ls),
                    )
                })
                .collect();
            let stage1 = run.advance(StageKind::Nr, &ext, nr)?;
            let set = run.correlations(&stage1)?;
            let aec = run.aec_matrices(&set, 1, |_, c| c.rle.clone())?;
            run.advance(StageKind::Aec, &stage1, aec)?
        }
        AlgorithmKind::NrExtAecPf => {
            let stage1 = run.nrext(&ext, mics)?;
            let set = run.correlations(&stage1)?;
            let aec = run.aec_matrices(&set, mics, |_, c| c.rle.clone())?;
            let stage2 = run.advance(StageKind::Aec, &stage1, aec)?;
            // the unprocessed reference takes the same filterbank round trips
            let mut aligned = mic;
            for _ in 0..2 {
                aligned = run.round_trip(aligned)?;
            }
            let pf = postfilter(&run, &stage2, &aligned, r)?;
            run.advance(StageKind::Pf, &stage2, pf)?
        }
        AlgorithmKind::NrExtAecLin => {
            let fl = echo_path.as_ref().expect("echo path computed for linear variants");
            let stage1 = run.nrext(&ext, mics)?;
            let set = run.correlations(&stage1)?;
            set.require(Regime::EchoOnly, "AEC after NR_ext")?;
            let cross = cross_correlations(&set, mics)?;
            let aec = per_bin(set.bins(), |f| {
                let rll = &cross[f].rll;
                let a = pseudo_inverse(rll, run.policy())? * rll * fl[f].adjoint();
                Ok(vstack(&identity(mics), &-a) * selection_vector(mics, r))
            })?;
            run.advance(StageKind::Aec, &stage1, aec)?
        }
    };
    if out.channels() != 1 {
        return Err(mismatch(format!(
            "{kind} cascade ended with {} channels",
            out.channels()
        )));
    }
    let output = out.try_map(|t| Ok(synthesize(t, &opts.stft)?.swap_remove(0)))?;
    let Runner {
        vad,
        stages,
        signals,
        ..
    } = run;
    let filters = compose(&stages)?;
    let solution = FilterSolution {
        kind,
        filters,
        stages,
    };
    solution.validate()?;
    Ok(CascadeOutput {
        kind,
        solution,
        output,
        reference,
        stages: signals,
        vad,
    })
}

/// Post-filter `pinv(Σ') R_s's t_r` from the AEC output and the unprocessed
/// microphones.
fn postfilter(
    run: &Runner<'_>,
    input: &Components<StftTensor>,
    mic: &Components<StftTensor>,
    r: usize,
) -> Result<Vec<CMatrix>> {
    let set = run.correlations(input)?;
    set.require(Regime::SpeechEcho, "post-filter")?;
    set.require(Regime::EchoOnly, "post-filter")?;
    let m = set.rows();
    let rank = run.opts.speech_rank;
    let policy = run.policy();
    let rsps: Vec<CMatrix> = match run.opts.pf_speech_estimate {
        PfSpeechEstimate::Subtraction => {
            let cross =
                SpectralCorrelationSet::accumulate_cross(&input.mixture()?, &mic.mixture()?, &run.vad)?;
            per_bin(set.bins(), |f| {
                let a = set.mean(f, Regime::SpeechEcho)?;
                let b = set.mean(f, Regime::EchoOnly)?;
                let p = gevd_pencil(&a, &b, policy)?.dominant_projector(rank)?;
                let c = cross.mean(f, Regime::SpeechEcho)? - cross.mean(f, Regime::EchoOnly)?;
                Ok(p * c)
            })?
        }
        PfSpeechEstimate::InverseNr => {
            let nrext = run
                .stages
                .iter()
                .find(|s| s.kind == StageKind::NrExt)
                .ok_or_else(|| invalid("post-filter needs a preceding NR_ext stage"))?;
            per_bin(set.bins(), |f| {
                let a = set.mean(f, Regime::SpeechEcho)?;
                let b = set.mean(f, Regime::EchoOnly)?;
                let rsp = gevd_lowrank_subtract(&a, &b, rank, policy)?;
                let w11 = block(&nrext.matrices[f], 0, 0, m, m);
                let inv = w11.try_inverse().ok_or_else(|| {
                    Error::DegenerateScenario(format!(
                        "bin {f}: microphone block of the NR_ext filter is singular"
                    ))
                })?;
                Ok(rsp * inv)
            })?
        }
    };
    per_bin(set.bins(), |f| {
        let sigma = set.mean(f, Regime::SpeechEcho)?;
        Ok(pseudo_inverse(&sigma, policy)? * &rsps[f] * selection_vector(m, r))
    })
}

/// Overall per-bin filter: the product of all stage matrices.
fn compose(stages: &[Stage]) -> Result<Vec<CMatrix>> {
    let first = stages
        .first()
        .ok_or_else(|| invalid("cascade has no stages"))?;
    (0..first.matrices.len())
        .map(|f| {
            let w = stages[1..]
                .iter()
                .fold(first.matrices[f].clone(), |acc, s| acc * &s.matrices[f]);
            if w.ncols() != 1 {
                return Err(mismatch("cascade does not end in a single channel"));
            }
            Ok(w)
        })
        .collect()
}
