//! `spm` command line.
//!
//! Exit codes: 0 on success, 2 for configuration or I/O problems, 3 for
//! numerical failures. Messages go to standard error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::bounds::{write_bound_csv, BoundRow};
use crate::error::{Error, Result};
use crate::harness::config::{BoundKind, ExperimentConfig};
use crate::harness::{
    bounds_at, default_time_grid, estimate_record, run_atoms, run_error_vs_delta, run_error_vs_n,
    run_error_vs_time, run_tracking, simulate_truth, ErrorCurve,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spm", about = "Spin-precession magnetometer estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Monte-Carlo run count, overrides the config.
    #[arg(long, global = true)]
    runs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate one shot of the configured truth.
    Simulate,
    /// Simulate one shot and report each estimator's final value.
    Estimate,
    /// Evaluate the configured bounds on the time grid.
    Bcrb,
    /// Error against probing time.
    SweepTime,
    /// Error against atom number.
    SweepN,
    /// Error against sampling period.
    SweepDelta,
    /// Track the configured truth with a filter.
    Track,
    /// Atom-number estimates from steady-state noise.
    Atoms,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Bcrb => "bcrb",
            Command::SweepTime => "sweep-time",
            Command::SweepN => "sweep-n",
            Command::SweepDelta => "sweep-delta",
            Command::Track => "track",
            Command::Atoms => "atoms",
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("spm {}: {e}", cli.command.name());
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = cli.runs {
        cfg.runs = runs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn git_revision() -> String {
    Process::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let started = Instant::now();
    let name = cli.command.name();
    let csv = format!("{name}.csv");
    let mut w = create(&cli.out, &csv)?;
    let mut extra = json!({});

    match cli.command {
        Command::Simulate => {
            let (traj, rec) = simulate_truth(&cfg, 0)?;
            writeln!(w, "t,omega,j_y,j_z,y")?;
            for (i, y) in rec.outcomes.iter().enumerate() {
                let s = &traj.states[i + 1];
                writeln!(w, "{:.8e},{},{},{},{}", rec.time(i), s.omega, s.j_y, s.j_z, y)?;
            }
        }
        Command::Estimate => {
            let (traj, rec) = simulate_truth(&cfg, 0)?;
            let truth = traj.states.last().map_or(f64::NAN, |s| s.omega);
            writeln!(w, "estimator,omega_hat,sigma,omega_true,error")?;
            for e in estimate_record(&cfg, &rec)? {
                let sigma = e.sigma.map_or(String::new(), |s| s.to_string());
                writeln!(w, "{},{},{},{},{}", e.estimator.name(), e.omega_hat, sigma, truth, e.omega_hat - truth)?;
            }
        }
        Command::Bcrb => {
            let times = default_time_grid(&cfg);
            let mut rows = vec![];
            for (kind, results) in cfg.bounds.iter().zip(bounds_at(&cfg, &cfg.params, &times)?) {
                rows.extend(results.iter().map(|b| BoundRow {
                    t: b.t,
                    bound: b.value,
                    stderr: b.mc_std_err,
                    kind: bound_name(*kind),
                }));
            }
            write_bound_csv(&rows, &mut w)?;
        }
        Command::SweepTime | Command::SweepN | Command::SweepDelta => {
            let curve: ErrorCurve = match cli.command {
                Command::SweepTime => run_error_vs_time(&cfg)?,
                Command::SweepN => run_error_vs_n(&cfg)?,
                _ => run_error_vs_delta(&cfg)?,
            };
            curve.write_csv(&mut w)?;
            extra = json!({ "excluded": curve.excluded });
        }
        Command::Track => {
            let tr = run_tracking(&cfg)?;
            tr.write_csv(&mut w)?;
            extra = json!({ "filter": tr.kind.name(), "mean_nis": tr.trace.mean_nis() });
        }
        Command::Atoms => {
            writeln!(w, "trial,n_hat,sigma_n,k_used,degenerate")?;
            for (i, e) in run_atoms(&cfg)?.iter().enumerate() {
                writeln!(w, "{i},{},{},{},{}", e.n_hat, e.sigma_n, e.k_used, e.degenerate)?;
            }
        }
    }
    w.flush()?;

    let manifest = json!({
        "subcommand": name,
        "config": cfg,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "git_revision": git_revision(),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": [csv],
        "details": extra,
    });
    let mut m = create(&cli.out, "manifest.json")?;
    serde_json::to_writer_pretty(&mut m, &manifest).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(m)?;
    m.flush()?;
    Ok(())
}

fn bound_name(k: BoundKind) -> &'static str {
    match k {
        BoundKind::BcrbNumeric => "bcrb_numeric",
        BoundKind::BcrbAnalytic => "bcrb_analytic",
        BoundKind::Crb => "crb",
        BoundKind::Floor => "floor",
    }
}
