use std::fs;
use std::path::Path;
use std::process::Command;

use aecnr_cli::{run_sweep, summarize, ExperimentConfig, RunStatus, SweepOptions};
use aecnr_core::room::SignalKind;

fn short_config(algorithms: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.duration_seconds = 10.0;
    cfg.sweep.algorithms = algorithms.iter().map(|s| s.to_string()).collect();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aecnr"))
}

#[test]
fn default_grid_gives_45_rows_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(&["MWF", "AEC-NR"]);
    let out = run_sweep(&cfg, dir.path(), &SweepOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 90);
    for alg in ["MWF", "AEC-NR"] {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.algorithm.name() == alg).collect();
        assert_eq!(rows.len(), 45);
        assert!(rows.iter().all(|r| r.status == RunStatus::Ok), "{rows:?}");
        assert!(rows.iter().all(|r| r.delta_snr_db.is_some() && r.sd_db.is_some()));
    }
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 91);
    assert!(csv.starts_with("algorithm,layout,snr_in_db,ser_in_db,status,"));
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains(&format!("config_hash = \"{}\"", out.config_hash)));
    assert!(manifest.contains("seed = 1"));

    // the saved config reproduces the hash
    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved.hash().unwrap(), out.config_hash);
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = short_config(&["NRext-AEC-PF", "NR-AEC-mod"]);
    cfg.sweep.snr_grid_db = vec![0.0];
    cfg.sweep.ser_grid_db = vec![-15.0, 15.0];
    cfg.sweep.layouts = vec![2, 4];
    let opts = SweepOptions {
        jobs: Some(2),
        ..SweepOptions::default()
    };
    run_sweep(&cfg, a.path(), &opts).unwrap();
    run_sweep(&cfg, b.path(), &SweepOptions::default()).unwrap();
    for f in ["results.csv", "manifest.toml", "config.toml"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn missing_regime_becomes_a_failure_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_config(&["MWF", "AEC-NR"]);
    cfg.scenario.speech_kind = SignalKind::White;
    cfg.sweep.snr_grid_db = vec![0.0];
    cfg.sweep.ser_grid_db = vec![0.0];
    cfg.sweep.layouts = vec![1, 3];
    let out = run_sweep(&cfg, dir.path(), &SweepOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert!(out.rows.iter().all(|r| r.status == RunStatus::MissingRegime));
    assert_eq!(out.failures(), 4);
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with("missing-regime,NA,NA,NA")));
}

#[test]
fn write_audio_stores_input_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_config(&["AEC-NR"]);
    cfg.scenario.duration_seconds = 6.0;
    cfg.sweep.snr_grid_db = vec![0.0];
    cfg.sweep.ser_grid_db = vec![0.0];
    cfg.sweep.layouts = vec![1];
    let opts = SweepOptions {
        write_audio: true,
        ..SweepOptions::default()
    };
    run_sweep(&cfg, dir.path(), &opts).unwrap();
    let audio = dir.path().join("audio");
    for f in ["input_layout1_snr0_ser0.wav", "AEC-NR_layout1_snr0_ser0.wav"] {
        let (x, fs) = aecnr_core::room::read_wav_mono(&audio.join(f)).unwrap();
        assert_eq!(fs, 16_000.0);
        assert_eq!(x.len(), 96_000);
    }
}

fn write_rows(path: &Path, rows: &[&str]) {
    let mut text =
        String::from("algorithm,layout,snr_in_db,ser_in_db,status,delta_snr_db,delta_ser_db,sd_db\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn summarize_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_rows(
        &path,
        &[
            "MWF,1,0,0,ok,3.5,1.25,-0.5",
            "MWF,2,0,0,ok,3.5,1.25,-0.5",
            "MWF,3,0,0,ok,3.5,1.25,-0.5",
        ],
    );
    let agg = summarize(dir.path()).unwrap();
    assert_eq!(agg.len(), 1);
    let s = agg[0].delta_snr_db.unwrap();
    assert_eq!((s.mean, s.std), (3.5, 0.0));
    assert_eq!(agg[0].sd_db.unwrap().mean, -0.5);
}

#[test]
fn summarize_hand_checked_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_rows(
        &path,
        &[
            "AEC-NR,1,-15,0,ok,10.0,20.0,1.0",
            "AEC-NR,2,-15,0,ok,12.0,NA,2.0",
            "AEC-NR,3,-15,0,ok,17.0,26.0,3.0",
            "AEC-NR,4,-15,0,missing-regime,NA,NA,NA",
            "MWF,1,-15,0,ok,1.0,1.0,1.0",
        ],
    );
    let agg = summarize(&path).unwrap();
    assert_eq!(agg.len(), 2);
    let a = &agg[0];
    assert_eq!((a.algorithm.as_str(), a.runs, a.ok), ("AEC-NR", 4, 3));
    // mean 13, deviations -3, -1, 4: population variance 26 / 3
    let snr = a.delta_snr_db.unwrap();
    assert!((snr.mean - 13.0).abs() < 1e-12);
    assert!((snr.std - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
    // NA skipped: values 20 and 26
    let ser = a.delta_ser_db.unwrap();
    assert_eq!(ser.count, 2);
    assert!((ser.mean - 23.0).abs() < 1e-12 && (ser.std - 3.0).abs() < 1e-12);
    let sd = a.sd_db.unwrap();
    assert!((sd.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn summarize_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    write_rows(&dir.path().join("results.csv"), &[]);
    assert!(summarize(dir.path()).is_err());
    assert!(summarize(&dir.path().join("absent.csv")).is_err());
}

#[test]
fn binary_runs_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(
        &cfg_path,
        "[scenario]\nduration_seconds = 10.0\nspeech_path = \"missing.wav\"\n\n[sweep]\nlayouts = [1]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3", "--algorithms", "mwf,aec-nr", "--snr-grid", "-15,0"])
        .args(["--ser-grid", "-15", "--duration", "8"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3") && manifest.contains("duration_seconds = 8.0"));

    let status = bin().arg("summarize").arg(&out).status().unwrap();
    assert!(status.success());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn binary_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, "[sweep]\nlayouts = [9]\n").unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("layout 9"));
}

#[test]
fn binary_verify_prints_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let out = bin()
        .args(["verify", "--seeds", "2", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    for claim in ["inverse_factorization", "rank_deficient_condition_3", "linear_simplification"] {
        assert!(table.contains(claim), "{table}");
    }
    assert!(fs::read_to_string(csv).unwrap().lines().count() > 16 * 2);
}
