use aecnr_core::estimation::{Regime, SpectralCorrelationSet};
use aecnr_core::filters::{
    apply_per_bin, bundle_components, echo_path_response, reference_vad, run_cascade,
    AlgorithmKind, CascadeOptions, PfSpeechEstimate, StageKind, Transport,
};
use aecnr_core::room::{
    power, synthesize_scenario, EchoPathModel, RoomConfig, ScenarioBundle, ScenarioConfig,
    SignalKind,
};
use aecnr_core::stft::{analyze, synthesize, StftConfig};
use aecnr_core::Error;

fn scenario(cfg: ScenarioConfig) -> ScenarioBundle {
    synthesize_scenario(&cfg, &RoomConfig::default()).unwrap()
}

fn base() -> ScenarioConfig {
    ScenarioConfig {
        duration_seconds: 10.0,
        ..ScenarioConfig::default()
    }
}

fn interior(x: &[f64]) -> &[f64] {
    &x[512..x.len() - 512]
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (power(&diff) / power(b)).sqrt()
}

#[test]
fn clean_input_passes_through() {
    let bundle = scenario(ScenarioConfig {
        snr_in_db: f64::INFINITY,
        ser_in_db: f64::INFINITY,
        ..base()
    });
    let s = &bundle.s[bundle.reference_mic];
    for transport in [Transport::TimeDomain, Transport::Spectral] {
        // every frame with any speech counts as active, so regime (0,1) is silent
        let opts = CascadeOptions {
            speech_rank: bundle.mics(),
            vad_threshold_db: 300.0,
            transport,
            ..CascadeOptions::default()
        };
        for kind in AlgorithmKind::GENERAL {
            let out = run_cascade(kind, &bundle, &opts).unwrap();
            let err = relative_error(interior(&out.enhanced()), interior(s));
            assert!(err < 1e-6, "{kind} {transport:?}: relative error {err:e}");
        }
    }
}

#[test]
fn single_mic_mwf_matches_scalar_wiener_prediction() {
    // flat spectra give almost no SNR gain; colored noise gives several dB
    for noise_kind in [SignalKind::White, SignalKind::Babble] {
        let (predicted, measured) = single_mic_wiener(noise_kind);
        assert!(
            (predicted - measured).abs() < 0.5,
            "{noise_kind:?}: predicted {predicted:.2} dB, measured {measured:.2} dB"
        );
    }
}

fn single_mic_wiener(noise_kind: SignalKind) -> (f64, f64) {
    let bundle = scenario(ScenarioConfig {
        mic_positions: vec![[2.0, 1.9, 1.0]],
        speech_kind: SignalKind::GatedWhite,
        noise_kind,
        snr_in_db: 0.0,
        ser_in_db: f64::INFINITY,
        ..base()
    });
    let opts = CascadeOptions::default();
    let out = run_cascade(AlgorithmKind::Mwf, &bundle, &opts).unwrap();

    // per-bin oracle gain S / (S + N) from the true components
    let cfg = opts.stft;
    let vad = reference_vad(&bundle, &cfg, opts.vad_threshold_db).unwrap();
    let s = analyze(&bundle.s, &cfg).unwrap();
    let n = analyze(&bundle.n, &cfg).unwrap();
    let (mut num_s, mut num_n, mut den_s, mut den_n) = (0.0, 0.0, 0.0, 0.0);
    for f in 0..cfg.bins() {
        let (mut s_act, mut n_all, mut s_all, mut k_act) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..s.frames() {
            let (ps, pn) = (s.get(k, f, 0).norm_sqr(), n.get(k, f, 0).norm_sqr());
            s_all += ps;
            n_all += pn;
            if vad.speech[k] {
                s_act += ps;
                k_act += 1.0;
            }
        }
        let frames = s.frames() as f64;
        let (s_act, pn) = (s_act / k_act, n_all / frames);
        let g = s_act / (s_act + pn);
        num_s += g * g * s_all;
        num_n += g * g * n_all;
        den_s += s_all;
        den_n += n_all;
    }
    let predicted = 10.0 * ((num_s / num_n) / (den_s / den_n)).log10();
    let measured = 10.0
        * ((power(&out.output.speech) / power(&out.output.noise))
            / (power(&out.reference.speech) / power(&out.reference.noise)))
        .log10();
    eprintln!("{noise_kind:?}: predicted {predicted:.3} dB, measured {measured:.3} dB");
    (predicted, measured)
}

fn linear_echo_bundle(snr: f64) -> ScenarioBundle {
    scenario(ScenarioConfig {
        echo_path_model: EchoPathModel::FlatGains,
        snr_in_db: snr,
        ser_in_db: -10.0,
        ..base()
    })
}

#[test]
fn aec_nr_cancels_linear_echo() {
    let bundle = linear_echo_bundle(f64::INFINITY);
    for kind in [AlgorithmKind::AecNr, AlgorithmKind::AecNrLin] {
        let out = run_cascade(kind, &bundle, &CascadeOptions::default()).unwrap();
        let ratio = power(&out.output.echo()) / power(&out.reference.echo());
        assert!(ratio < 1e-6, "{kind}: residual echo ratio {ratio:e}");
    }
}

#[test]
fn echo_path_response_of_flat_gains_is_constant() {
    let bundle = linear_echo_bundle(0.0);
    let cfg = StftConfig::default();
    let resp = echo_path_response(&bundle.echo_irs, &cfg).unwrap();
    for (f, fm) in resp.iter().enumerate().step_by(17) {
        for i in 0..bundle.mics() {
            for j in 0..bundle.loudspeakers() {
                assert!((fm[(i, j)].re - bundle.echo_irs[i][j][0]).abs() < 1e-12, "bin {f}");
                assert!(fm[(i, j)].im.abs() < 1e-12);
            }
        }
    }
    // a one-sample delay rotates the phase by one bin step
    let delayed = vec![vec![vec![0.0, 1.0]]];
    let resp = echo_path_response(&delayed, &cfg).unwrap();
    let w = 2.0 * std::f64::consts::PI * 3.0 / 512.0;
    assert!((resp[3][(0, 0)].arg() + w).abs() < 1e-12);
    assert!(echo_path_response(&[vec![vec![1.0]], vec![]], &cfg).is_err());
}

#[test]
fn composed_filter_reproduces_spectral_cascade() {
    let bundle = scenario(base());
    let opts = CascadeOptions {
        transport: Transport::Spectral,
        ..CascadeOptions::default()
    };
    let cfg = opts.stft;
    for kind in AlgorithmKind::GENERAL {
        let out = run_cascade(kind, &bundle, &opts).unwrap();
        let comps = bundle_components(&bundle);
        let mut x: Vec<Vec<f64>> = comps.speech.clone();
        for part in [&comps.noise, &comps.echo_speech, &comps.echo_noise] {
            for (a, b) in x.iter_mut().zip(part) {
                a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
            }
        }
        if out.solution.input_dim() == bundle.mics() {
            x.truncate(bundle.mics());
        }
        let y = apply_per_bin(&out.solution, &analyze(&x, &cfg).unwrap()).unwrap();
        let direct = synthesize(&y, &cfg).unwrap().swap_remove(0);
        let err = relative_error(&direct, &out.enhanced());
        assert!(err < 1e-9, "{kind}: {err:e}");
    }
}

fn stage(out: &aecnr_core::filters::CascadeOutput, kind: StageKind) -> usize {
    out.stages.iter().position(|s| s.kind == kind).unwrap()
}

#[test]
fn aec_stage_leaves_speech_and_noise_untouched() {
    let bundle = scenario(base());
    let opts = CascadeOptions::default();

    let out = run_cascade(AlgorithmKind::NrExtAecPf, &bundle, &opts).unwrap();
    let a = stage(&out, StageKind::Aec);
    let (before, after) = (&out.stages[a - 1].components, &out.stages[a].components);
    for i in 0..bundle.mics() {
        for (x, y) in [(&before.speech, &after.speech), (&before.noise, &after.noise)] {
            let err = relative_error(interior(&y[i]), interior(&x[i]));
            assert!(err < 1e-9, "NRext-AEC-PF channel {i}: {err:e}");
        }
    }

    let out = run_cascade(AlgorithmKind::NrAecMod, &bundle, &opts).unwrap();
    let a = stage(&out, StageKind::Aec);
    let (before, after) = (&out.stages[a - 1].components, &out.stages[a].components);
    for (x, y) in [(&before.speech, &after.speech), (&before.noise, &after.noise)] {
        let err = relative_error(interior(&y[0]), interior(&x[0]));
        assert!(err < 1e-9, "NR-AEC-mod: {err:e}");
    }
}

#[test]
fn every_algorithm_reduces_echo_and_noise() {
    let bundle = scenario(ScenarioConfig {
        ser_in_db: -5.0,
        ..base()
    });
    for kind in AlgorithmKind::ALL {
        let out = run_cascade(kind, &bundle, &CascadeOptions::default()).unwrap();
        let gain = |a: &[f64], b: &[f64]| 10.0 * (power(b) / power(a)).log10();
        let speech = gain(&out.output.speech, &out.reference.speech);
        let echo = gain(&out.output.echo(), &out.reference.echo()) - speech;
        let noise = gain(&out.output.noise, &out.reference.noise) - speech;
        assert!(echo > 3.0, "{kind}: echo suppression {echo:.1} dB");
        assert!(noise > 0.0, "{kind}: noise suppression {noise:.1} dB");
        assert!(out.enhanced().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn inverse_nr_post_filter_option_runs() {
    let bundle = scenario(base());
    let base_opts = CascadeOptions::default();
    let alt = CascadeOptions {
        pf_speech_estimate: PfSpeechEstimate::InverseNr,
        ..base_opts.clone()
    };
    let a = run_cascade(AlgorithmKind::NrExtAecPf, &bundle, &base_opts).unwrap();
    let b = run_cascade(AlgorithmKind::NrExtAecPf, &bundle, &alt).unwrap();
    let ser = |o: &aecnr_core::filters::CascadeOutput| {
        10.0 * (power(&o.output.speech) / power(&o.output.echo())).log10()
    };
    assert!((ser(&a) - ser(&b)).abs() < 6.0, "{} vs {}", ser(&a), ser(&b));
}

#[test]
fn always_active_speech_reports_missing_regime() {
    let bundle = scenario(ScenarioConfig {
        speech_kind: SignalKind::White,
        ..base()
    });
    let err = run_cascade(AlgorithmKind::Mwf, &bundle, &CascadeOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MissingRegime { .. }), "{err}");
}

#[test]
fn echo_free_scenarios_use_all_active_farend_vad() {
    let bundle = scenario(ScenarioConfig {
        ser_in_db: f64::INFINITY,
        ..base()
    });
    let cfg = StftConfig::default();
    let vad = reference_vad(&bundle, &cfg, 40.0).unwrap();
    assert!(vad.farend.iter().all(|&v| v));
    let counts = vad.counts();
    assert_eq!(counts[Regime::SpeechOnly.index()] + counts[Regime::Neither.index()], 0);
    let x = analyze(&bundle.m, &cfg).unwrap();
    let set = SpectralCorrelationSet::accumulate(&x, &vad).unwrap();
    assert!(set.has(Regime::SpeechEcho) && set.has(Regime::EchoOnly));
    run_cascade(AlgorithmKind::AecNr, &bundle, &CascadeOptions::default()).unwrap();
}

#[test]
fn results_are_deterministic() {
    let bundle = scenario(base());
    let opts = CascadeOptions {
        keep_stage_signals: false,
        ..CascadeOptions::default()
    };
    let a = run_cascade(AlgorithmKind::NrExtAecPf, &bundle, &opts).unwrap();
    let b = run_cascade(AlgorithmKind::NrExtAecPf, &bundle, &opts).unwrap();
    assert_eq!(a.enhanced(), b.enhanced());
    assert!(a.stages.is_empty());
}
