//! Batch experiment driver: sweeps scenarios over SNR, SER and layout grids,
//! writes per-run metrics and aggregates them.

pub mod config;
pub mod summary;
pub mod sweep;

use std::fmt::Write as _;
use std::path::PathBuf;

use aecnr_core::linalg::RankPolicy;
use aecnr_core::verification::{
    equivalence_suite, supplementary_suite, SupplementaryReport, SyntheticModel,
    IDENTITY_TOLERANCE,
};
use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

pub use config::{parse_grid, ExperimentConfig};
pub use summary::{summarize, write_summary, AggregateRow, Stat};
pub use sweep::{run_sweep, ResultRow, RunStatus, SweepOptions, SweepOutcome};

#[derive(Debug, Parser)]
#[command(name = "aecnr", version, about = "Multichannel AEC and noise reduction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the configured grid and write results, config and manifest.
    Run(RunArgs),
    /// Aggregate a results CSV per algorithm and operating point.
    Summarize(SummarizeArgs),
    /// Run the numerical certificates only.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config with [scenario], [room], [processing] and [sweep] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for source signals and room responses.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated algorithm names, or `all`.
    #[arg(long)]
    pub algorithms: Option<String>,
    /// Comma-separated input SNRs in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_grid: Option<String>,
    /// Comma-separated input SERs in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub ser_grid: Option<String>,
    /// Signal duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Also run the numerical certificates and print their table.
    #[arg(long)]
    pub verify: bool,
    /// Write the reference-microphone input and every enhanced output as WAV.
    #[arg(long)]
    pub write_audio: bool,
    /// Worker threads; defaults to every core.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Results CSV or a directory holding `results.csv`.
    pub input: PathBuf,
    /// Output CSV; defaults to `summary.csv` next to the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random draws per matrix size.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Optional CSV with one row per certificate.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// The config file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
            cfg.room.seed = seed;
        }
        if let Some(a) = &self.algorithms {
            cfg.sweep.algorithms = if a.trim().eq_ignore_ascii_case("all") {
                aecnr_core::filters::AlgorithmKind::ALL
                    .iter()
                    .map(|k| k.name().to_string())
                    .collect()
            } else {
                a.split(',').map(|s| s.trim().to_string()).collect()
            };
        }
        if let Some(g) = &self.snr_grid {
            cfg.sweep.snr_grid_db = parse_grid(g)?;
        }
        if let Some(g) = &self.ser_grid {
            cfg.sweep.ser_grid_db = parse_grid(g)?;
        }
        if let Some(d) = self.duration {
            cfg.scenario.duration_seconds = d;
        }
        cfg.substitute_missing_corpora();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Certificates from the supplementary suite plus equivalence checks on
/// full-rank and duplicated-loudspeaker models.
#[derive(Debug, Clone)]
pub struct VerificationOutcome {
    pub supplementary: SupplementaryReport,
    /// `(name, trials, passed, worst residual)`.
    pub equivalence: Vec<(String, usize, usize, f64)>,
}

impl VerificationOutcome {
    pub fn all_passed(&self) -> bool {
        self.supplementary.all_passed() && self.equivalence.iter().all(|r| r.1 == r.2)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<34} {:>7} {:>7} {:>12}\n",
            "claim", "trials", "passed", "worst"
        );
        let rows = self.supplementary.summary().into_iter().chain(self.equivalence.clone());
        for (name, trials, passed, worst) in rows {
            let _ = writeln!(out, "{name:<34} {trials:>7} {passed:>7} {worst:>12.3e}");
        }
        out
    }
}

pub fn run_verification(seeds: u64) -> Result<VerificationOutcome> {
    if seeds == 0 {
        bail!("at least one seed is required");
    }
    let sizes: Vec<(usize, usize)> = (1..=4).flat_map(|m| (1..=4).map(move |l| (m, l))).collect();
    let seed_list: Vec<u64> = (0..seeds).collect();
    let supplementary = supplementary_suite(&sizes, &seed_list)?;

    let policy = RankPolicy::default();
    let mut full = ("equivalence_full_rank".to_string(), 0, 0, 0.0f64);
    let mut dup = ("wiener_hopf_duplicated_loudspeaker".to_string(), 0, 0, 0.0f64);
    for &(m, l) in &sizes {
        for &seed in &seed_list {
            let model = SyntheticModel::seeded(seed, m, l);
            let rep = equivalence_suite(&model, 0, &policy)?;
            let worst = rep.max_deviation().max(rep.max_wiener_hopf_residual());
            full.1 += 1;
            full.2 += usize::from(worst <= IDENTITY_TOLERANCE);
            full.3 = full.3.max(worst);
            if l >= 2 {
                let rep = equivalence_suite(&model.with_duplicated_loudspeaker()?, 0, &policy)?;
                let worst = rep.max_wiener_hopf_residual();
                dup.1 += 1;
                dup.2 += usize::from(worst <= IDENTITY_TOLERANCE);
                dup.3 = dup.3.max(worst);
            }
        }
    }
    Ok(VerificationOutcome {
        supplementary,
        equivalence: vec![full, dup],
    })
}

/// Executes a parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve_config()?;
            let mut code = 0;
            if args.verify {
                let v = run_verification(20)?;
                print!("{}", v.table());
                std::fs::create_dir_all(&args.out)?;
                std::fs::write(args.out.join("verification.csv"), v.supplementary.to_csv())?;
                if !v.all_passed() {
                    code = 1;
                }
            }
            let opts = SweepOptions {
                jobs: args.jobs,
                write_audio: args.write_audio,
            };
            let outcome = run_sweep(&cfg, &args.out, &opts)?;
            println!(
                "{} rows ({} failed) written to {}, config hash {}",
                outcome.rows.len(),
                outcome.failures(),
                args.out.join(sweep::RESULTS_FILE).display(),
                outcome.config_hash
            );
            Ok(code)
        }
        Command::Summarize(args) => {
            let rows = summarize(&args.input)?;
            let out = args.out.unwrap_or_else(|| {
                let dir = if args.input.is_dir() {
                    args.input.clone()
                } else {
                    args.input.parent().map(PathBuf::from).unwrap_or_default()
                };
                dir.join("summary.csv")
            });
            write_summary(&out, &rows)?;
            println!("{} aggregate rows written to {}", rows.len(), out.display());
            Ok(0)
        }
        Command::Verify(args) => {
            let v = run_verification(args.seeds)?;
            print!("{}", v.table());
            if let Some(p) = &args.out {
                std::fs::write(p, v.supplementary.to_csv())?;
            }
            Ok(if v.all_passed() { 0 } else { 1 })
        }
    }
}
