//! Monte-Carlo experiments and the command-line front end.
//!
//! Runs fan out over rayon; run `i` always uses the streams of
//! `RunStreams::new(seed, i)`, so results depend only on the config.

pub mod cli;
pub mod config;

use std::io::Write;

use rayon::prelude::*;

use crate::atoms::{estimate_atom_number, sample_steady_state, AtomCountEstimate, SteadyStart};
use crate::bounds::{
    bcrb_analytic_gaussian_prior, bcrb_numeric_at, crb, noiseless_bcrb_floor, BoundResult,
};
use crate::error::{Error, Result};
use crate::filters::{run_filter, FilterConfig, FilterKind, FilterTrace};
use crate::model::{SignalModel, SpmParams};
use crate::pem::map_estimate;
use crate::rng::{normal, RunStreams};
use crate::sde_sim::{sample_count, simulate_with, MeasurementRecord, SimOptions, Trajectory};
use crate::stats::{mean, rms_std_err};

pub use cli::{cli_main, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};
pub use config::{log_grid, BoundKind, Estimator, ExperimentConfig, PriorSpec, SweepAxis};

/// Probing time of the sampling-period sweep, s.
pub const DELTA_SWEEP_TIME: f64 = 1e-3;
/// Salt separating the bound's Monte-Carlo draws from the estimator runs.
const BOUND_SEED_SALT: u64 = 0xB0C5_0000_0000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorCurve {
    pub estimator: Estimator,
    /// RMS error per axis point, rad/s.
    pub rmse: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Squared errors of the included runs, `[axis point][run]`. Runs are in
    /// the same order for every estimator, so they pair up.
    pub sq_errors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub kind: BoundKind,
    /// MSE bound, rad²/s².
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    /// Column name of the axis: `t`, `n` or `delta`.
    pub axis_name: &'static str,
    pub axis: Vec<f64>,
    pub estimators: Vec<EstimatorCurve>,
    pub bounds: Vec<BoundCurve>,
    pub runs: usize,
    /// Runs excluded at each axis point.
    pub excluded: Vec<usize>,
}

impl ErrorCurve {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorCurve> {
        self.estimators.iter().find(|c| c.estimator == e)
    }

    pub fn bound(&self, k: BoundKind) -> Option<&BoundCurve> {
        self.bounds.iter().find(|c| c.kind == k)
    }

    /// `axis,rmse_<est>…,<bound>…,stderr_<est>…,stderr_<bound>…`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut head = vec![self.axis_name.to_string()];
        head.extend(self.estimators.iter().map(|c| format!("rmse_{}", c.estimator.name())));
        head.extend(self.bounds.iter().map(|b| b.kind.column().to_string()));
        head.extend(self.estimators.iter().map(|c| format!("stderr_{}", c.estimator.name())));
        head.extend(self.bounds.iter().map(|b| format!("stderr_{}", b.kind.column())));
        writeln!(w, "{}", head.join(","))?;
        for (i, x) in self.axis.iter().enumerate() {
            let mut row = vec![format!("{x:.8e}")];
            row.extend(self.estimators.iter().map(|c| c.rmse[i].to_string()));
            row.extend(self.bounds.iter().map(|b| b.values[i].to_string()));
            row.extend(self.estimators.iter().map(|c| c.stderr[i].to_string()));
            row.extend(self.bounds.iter().map(|b| b.stderr[i].to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Squared errors of one run, `[estimator][time]`.
type RunErrors = Vec<Vec<f64>>;

/// One Monte-Carlo shot: draw ω*, simulate to the last time, estimate at every time.
fn run_once(cfg: &ExperimentConfig, p: &SpmParams, times: &[f64], run: u64) -> Result<RunErrors> {
    let mut streams = RunStreams::new(cfg.seed, run);
    let prior_omega = cfg.prior.omega(p)?;
    let truth = prior_omega.mu() + prior_omega.sigma() * normal(&mut streams.truth);
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let signal = SignalModel::Constant { omega0: truth };
    let (_, rec) = simulate_with(p, &signal, t_max, &SimOptions::with_substeps(cfg.substeps), &mut streams)?;
    let ks: Vec<usize> = times.iter().map(|t| sample_count(*t, p.delta)).collect();

    cfg.estimators
        .iter()
        .map(|e| match e.filter_kind() {
            Some(kind) => {
                let fc = filter_config(cfg, p, kind)?;
                let trace = run_filter(&fc, &rec)?;
                if let Some(err) = trace.failure {
                    return Err(err);
                }
                Ok(ks.iter().map(|&k| (trace.steps[k - 1].corrected.mean[0] - truth).powi(2)).collect())
            }
            None => {
                let spin = cfg.prior.spin(p);
                ks.iter()
                    .map(|&k| {
                        let est = map_estimate(&rec.truncated(k), p, &prior_omega, &spin)?;
                        Ok((est.omega_hat - truth).powi(2))
                    })
                    .collect()
            }
        })
        .collect()
}

fn filter_config(cfg: &ExperimentConfig, p: &SpmParams, kind: FilterKind) -> Result<FilterConfig> {
    Ok(FilterConfig {
        kind,
        assumed: cfg.assumed_model(),
        prior: cfg.prior.filter(p)?,
        params: *p,
    })
}

/// Runs all Monte-Carlo shots at fixed parameters. Returns per-estimator
/// squared errors `[estimator][time][run]` and the number of excluded runs.
fn monte_carlo(cfg: &ExperimentConfig, p: &SpmParams, times: &[f64]) -> Result<(Vec<Vec<Vec<f64>>>, usize)> {
    if times.is_empty() || times.iter().any(|t| sample_count(*t, p.delta) == 0) {
        return Err(Error::InvalidParameters("every time must be at least Delta".into()));
    }
    let outcomes: Vec<Result<RunErrors>> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| run_once(cfg, p, times, run))
        .collect();

    let mut sq = vec![vec![Vec::with_capacity(cfg.runs); times.len()]; cfg.estimators.len()];
    let mut excluded = 0;
    for (run, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(errs) => {
                for (e, per_time) in errs.into_iter().enumerate() {
                    for (i, v) in per_time.into_iter().enumerate() {
                        sq[e][i].push(v);
                    }
                }
            }
            Err(err) if err.is_config() => return Err(err),
            Err(err) => {
                log::warn!("run {run} excluded: {err}");
                excluded += 1;
            }
        }
    }
    check_exclusions(excluded, cfg.runs)?;
    Ok((sq, excluded))
}

/// More than 1% excluded runs fails the experiment.
pub fn check_exclusions(excluded: usize, runs: usize) -> Result<()> {
    if excluded * 100 > runs {
        return Err(Error::TooManyExclusions { excluded, runs });
    }
    Ok(())
}

/// Bound values at `times` for the configured bound set.
pub(crate) fn bounds_at(cfg: &ExperimentConfig, p: &SpmParams, times: &[f64]) -> Result<Vec<Vec<BoundResult>>> {
    let mean_omega = cfg.prior.mean(p);
    let sigma = cfg.prior.sigma_omega;
    let analytic = |v: f64, t: f64| BoundResult {
        value: v,
        mc_std_err: 0.0,
        t,
        samples: 0,
        h: 0.0,
        unsettled: 0,
    };
    cfg.bounds
        .iter()
        .map(|kind| match kind {
            BoundKind::BcrbNumeric => bcrb_numeric_at(
                p,
                &cfg.prior.omega(p)?,
                &cfg.prior.spin(p),
                times,
                cfg.bcrb_samples,
                cfg.seed ^ BOUND_SEED_SALT,
                cfg.substeps,
            ),
            BoundKind::BcrbAnalytic => {
                let centred = SpmParams {
                    omega_bar: mean_omega,
                    ..*p
                };
                times
                    .iter()
                    .map(|&t| Ok(analytic(bcrb_analytic_gaussian_prior(&centred, sigma, t)?, t)))
                    .collect()
            }
            BoundKind::Crb => times.iter().map(|&t| Ok(analytic(crb(mean_omega, t, p)?, t))).collect(),
            BoundKind::Floor => Ok(times
                .iter()
                .map(|&t| analytic(noiseless_bcrb_floor(p, sigma), t))
                .collect()),
        })
        .collect()
}

fn require_constant_truth(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.truth {
        SignalModel::Constant { .. } => Ok(()),
        ref other => Err(Error::UnsupportedSignal {
            context: "error sweeps (omega is drawn from the prior)",
            variant: other.name(),
        }),
    }
}

/// Sweeps over parameter sets, each evaluated at the same `times`.
fn sweep(
    cfg: &ExperimentConfig,
    axis_name: &'static str,
    axis: Vec<f64>,
    points: &[(SpmParams, Vec<f64>)],
) -> Result<ErrorCurve> {
    require_constant_truth(cfg)?;
    let mut est: Vec<EstimatorCurve> = cfg
        .estimators
        .iter()
        .map(|&e| EstimatorCurve {
            estimator: e,
            rmse: vec![],
            stderr: vec![],
            sq_errors: vec![],
        })
        .collect();
    let mut bnd: Vec<BoundCurve> = cfg
        .bounds
        .iter()
        .map(|&k| BoundCurve {
            kind: k,
            values: vec![],
            stderr: vec![],
        })
        .collect();
    let mut excluded = vec![];
    for (p, times) in points {
        let (sq, ex) = monte_carlo(cfg, p, times)?;
        for _ in times {
            excluded.push(ex);
        }
        for (c, per_time) in est.iter_mut().zip(sq) {
            for v in per_time {
                c.rmse.push(mean(&v).sqrt());
                c.stderr.push(rms_std_err(&v));
                c.sq_errors.push(v);
            }
        }
        for (c, per_time) in bnd.iter_mut().zip(bounds_at(cfg, p, times)?) {
            for b in per_time {
                c.values.push(b.value);
                c.stderr.push(b.mc_std_err);
            }
        }
    }
    Ok(ErrorCurve {
        axis_name,
        axis,
        estimators: est,
        bounds: bnd,
        runs: cfg.runs,
        excluded,
    })
}

/// Default time grid: 16 log-spaced points from 0.05 ms to the duration.
pub fn default_time_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    match &cfg.sweep {
        SweepAxis::Time(g) => g.clone(),
        _ if cfg.duration > 5e-5 => log_grid(5e-5, cfg.duration, 16),
        _ => vec![cfg.duration],
    }
}

/// Error against probing time. Filters report their running estimate; PEM is
/// re-minimised on each truncated record.
pub fn run_error_vs_time(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    cfg.validate()?;
    let times = default_time_grid(cfg);
    sweep(cfg, "t", times.clone(), &[(cfg.params, times)])
}

/// Error at the configured duration against atom number, with T₂ = 1/(Γ + αN).
pub fn run_error_vs_n(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    cfg.validate()?;
    let grid = match &cfg.sweep {
        SweepAxis::N(g) => g.clone(),
        _ => log_grid(1e9, 1e14, 11),
    };
    let points: Vec<(SpmParams, Vec<f64>)> = grid
        .iter()
        .map(|&n| {
            let p = SpmParams {
                n,
                t2_override: None,
                ..cfg.params
            };
            p.validate().map(|_| (p, vec![cfg.duration]))
        })
        .collect::<Result<_>>()?;
    sweep(cfg, "n", grid, &points)
}

/// Error at t = 1 ms against the sampling period.
pub fn run_error_vs_delta(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    cfg.validate()?;
    let grid = match &cfg.sweep {
        SweepAxis::Delta(g) => g.clone(),
        _ => vec![0.5e-6, 1e-6, 2e-6, 5e-6, 1e-5, 2e-5, 5e-5],
    };
    let points: Vec<(SpmParams, Vec<f64>)> = grid
        .iter()
        .map(|&delta| {
            let p = SpmParams { delta, ..cfg.params };
            p.validate().map(|_| (p, vec![DELTA_SWEEP_TIME]))
        })
        .collect::<Result<_>>()?;
    sweep(cfg, "delta", grid, &points)
}

/// One tracked shot with its truth overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub kind: FilterKind,
    pub truth: Vec<f64>,
    pub trace: FilterTrace,
}

impl TrackingResult {
    /// ω̂ − ω at each sample.
    pub fn errors(&self) -> Vec<f64> {
        self.trace.omega_hat().iter().zip(&self.truth).map(|(h, w)| h - w).collect()
    }

    /// Fraction of samples after `burn_in` (s) whose error is below `m`·σ̂.
    pub fn fraction_within(&self, m: f64, burn_in: f64) -> f64 {
        let err = self.errors();
        let sig = self.trace.sigma_omega();
        let idx: Vec<usize> = (0..err.len()).filter(|&i| self.trace.steps[i].t >= burn_in).collect();
        let ok = idx.iter().filter(|&&i| err[i].abs() < m * sig[i]).count();
        ok as f64 / idx.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,omega_true,omega_hat,sigma_omega,error,nis")?;
        let err = self.errors();
        for (i, s) in self.trace.steps.iter().enumerate() {
            writeln!(
                w,
                "{:.8e},{},{},{},{},{}",
                s.t,
                self.truth[i],
                s.corrected.mean[0],
                s.corrected.cov[(0, 0)].sqrt(),
                err[i],
                s.nis
            )?;
        }
        Ok(())
    }
}

/// Simulates one shot of the configured truth and filters it with the
/// first configured filter (EKF when none is listed).
pub fn run_tracking(cfg: &ExperimentConfig) -> Result<TrackingResult> {
    cfg.validate()?;
    let p = &cfg.params;
    let kind = cfg.filters().first().copied().unwrap_or(FilterKind::Ekf);
    let (traj, rec) = simulate_truth(cfg, 0)?;
    let trace = run_filter(&filter_config(cfg, p, kind)?, &rec)?;
    if let Some(err) = trace.failure {
        return Err(err);
    }
    Ok(TrackingResult {
        kind,
        truth: traj.states[1..].iter().map(|s| s.omega).collect(),
        trace,
    })
}

/// Simulates run `run` of the configured truth.
pub fn simulate_truth(cfg: &ExperimentConfig, run: u64) -> Result<(Trajectory, MeasurementRecord)> {
    let opts = SimOptions {
        omega0: cfg.omega0,
        ..SimOptions::with_substeps(cfg.substeps)
    };
    simulate_with(&cfg.params, &cfg.truth, cfg.duration, &opts, &mut RunStreams::new(cfg.seed, run))
}

/// Final estimates of each configured estimator on one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotEstimate {
    pub estimator: Estimator,
    pub omega_hat: f64,
    /// Posterior standard deviation (filters only).
    pub sigma: Option<f64>,
}

pub fn estimate_record(cfg: &ExperimentConfig, rec: &MeasurementRecord) -> Result<Vec<ShotEstimate>> {
    let p = SpmParams {
        delta: rec.delta,
        ..cfg.params
    };
    cfg.estimators
        .iter()
        .map(|&e| match e.filter_kind() {
            Some(kind) => {
                let trace = run_filter(&filter_config(cfg, &p, kind)?, rec)?;
                if let Some(err) = trace.failure {
                    return Err(err);
                }
                let last = trace.steps.last().ok_or(Error::EmptyRecord)?;
                Ok(ShotEstimate {
                    estimator: e,
                    omega_hat: last.corrected.mean[0],
                    sigma: Some(last.corrected.cov[(0, 0)].sqrt()),
                })
            }
            None => {
                let est = map_estimate(rec, &p, &cfg.prior.omega(&p)?, &cfg.prior.spin(&p))?;
                Ok(ShotEstimate {
                    estimator: e,
                    omega_hat: est.omega_hat,
                    sigma: None,
                })
            }
        })
        .collect()
}

/// `runs` independent atom-number estimates from `atom_samples` steady-state
/// outcomes each, at ω = the truth's nominal value.
pub fn run_atoms(cfg: &ExperimentConfig) -> Result<Vec<AtomCountEstimate>> {
    cfg.validate()?;
    let omega = cfg.truth.nominal();
    (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| {
            let mut streams = RunStreams::new(cfg.seed, run);
            let y = sample_steady_state(&cfg.params, omega, cfg.atom_samples, SteadyStart::Thermal, &mut streams)?;
            estimate_atom_number(&y, &cfg.params)
        })
        .collect()
}
