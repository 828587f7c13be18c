//! JSON experiment configuration.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! reference magnetometer setup with a 5 ms probing time and 200 runs.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::model::{GaussianPrior, SignalModel, SpmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ekf,
    Ckf,
    Pem,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ekf => "ekf",
            Estimator::Ckf => "ckf",
            Estimator::Pem => "pem",
        }
    }

    pub fn filter_kind(self) -> Option<FilterKind> {
        match self {
            Estimator::Ekf => Some(FilterKind::Ekf),
            Estimator::Ckf => Some(FilterKind::Ckf),
            Estimator::Pem => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    BcrbNumeric,
    BcrbAnalytic,
    Crb,
    Floor,
}

impl BoundKind {
    /// CSV column name.
    pub fn column(self) -> &'static str {
        match self {
            BoundKind::BcrbNumeric => "bcrb",
            BoundKind::BcrbAnalytic => "bcrb_analytic",
            BoundKind::Crb => "crb",
            BoundKind::Floor => "floor",
        }
    }
}

/// Priors shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// Prior mean of ω, rad/s; `None` uses ω̄ of the parameters.
    pub omega_mean: Option<f64>,
    /// Prior standard deviation of ω, rad/s.
    pub sigma_omega: f64,
    /// Spin prior covariance as a multiple of N²; mean is (0, N/2).
    pub spin_cov_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            omega_mean: None,
            sigma_omega: 2.0 * PI * 2e3,
            spin_cov_scale: 0.01,
        }
    }
}

impl PriorSpec {
    pub fn mean(&self, p: &SpmParams) -> f64 {
        self.omega_mean.unwrap_or(p.omega_bar)
    }

    pub fn omega(&self, p: &SpmParams) -> Result<GaussianPrior<1>> {
        GaussianPrior::<1>::scalar(self.mean(p), self.sigma_omega)
    }

    pub fn spin(&self, p: &SpmParams) -> GaussianPrior<2> {
        GaussianPrior::<2>::polarized(p.n, self.spin_cov_scale)
    }

    /// Joint filter prior over [ω, J_y, J_z], ω independent of the spin.
    pub fn filter(&self, p: &SpmParams) -> Result<GaussianPrior<3>> {
        let spin = self.spin(p);
        let mean = Vector3::new(self.mean(p), spin.mean[0], spin.mean[1]);
        let mut cov = Matrix3::zeros();
        cov[(0, 0)] = self.sigma_omega * self.sigma_omega;
        cov.fixed_view_mut::<2, 2>(1, 1).copy_from(&spin.cov);
        GaussianPrior::<3>::new(mean, cov)
    }
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "axis", content = "grid", rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    /// Probing times, s.
    Time(Vec<f64>),
    /// Atom numbers.
    N(Vec<f64>),
    /// Sampling periods, s.
    Delta(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: SpmParams,
    /// True ω(t). Error sweeps draw a constant ω per run from the prior and
    /// only use this to check it is `constant`.
    pub truth: SignalModel,
    /// Filter-side model of ω; `None` picks a default from `truth`.
    pub assumed: Option<SignalModel>,
    pub prior: PriorSpec,
    /// Probing time, s.
    pub duration: f64,
    pub substeps: usize,
    pub runs: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub bounds: Vec<BoundKind>,
    pub sweep: SweepAxis,
    /// Monte-Carlo draws of the numerical BCRB.
    pub bcrb_samples: usize,
    /// Starting ω of stochastic truths in tracking runs, rad/s.
    pub omega0: Option<f64>,
    /// Samples per trial of the `atoms` command.
    pub atom_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let params = SpmParams::default();
        Self {
            truth: SignalModel::Constant {
                omega0: params.omega_bar,
            },
            params,
            assumed: None,
            prior: PriorSpec::default(),
            duration: 5e-3,
            substeps: 5,
            runs: 200,
            seed: 1,
            estimators: vec![Estimator::Ekf, Estimator::Ckf, Estimator::Pem],
            bounds: vec![BoundKind::BcrbNumeric],
            sweep: SweepAxis::None,
            bcrb_samples: 1000,
            omega0: None,
            atom_samples: 4_000_000,
        }
    }
}

/// Tracking filter model for deterministic waveforms: a Wiener process with d_c = 1e8.
pub const TRACKING_WIENER_DC: f64 = 1e8;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.params.validate()?;
        self.truth.validate()?;
        if let Some(a) = &self.assumed {
            a.validate()?;
        }
        if self.runs < 1 {
            return bad("runs must be at least 1");
        }
        if self.substeps < 1 {
            return bad("substeps must be at least 1");
        }
        if !(self.duration >= self.params.delta && self.duration.is_finite()) {
            return bad("duration must be finite and at least Delta");
        }
        if !(self.prior.sigma_omega > 0.0 && self.prior.sigma_omega.is_finite()) {
            return bad("prior sigma_omega must be positive and finite");
        }
        if !(self.prior.spin_cov_scale >= 0.0) {
            return bad("prior spin_cov_scale must be non-negative");
        }
        if self.bcrb_samples < 2 {
            return bad("bcrb_samples must be at least 2");
        }
        match &self.sweep {
            SweepAxis::None => {}
            SweepAxis::Time(g) | SweepAxis::N(g) | SweepAxis::Delta(g) => {
                if g.is_empty() || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("sweep grid must be non-empty and positive");
                }
            }
        }
        Ok(())
    }

    /// The filter's model of ω: the truth itself when it is OU or Wiener, a
    /// frozen Wiener process for constant truths, and the tracking Wiener
    /// model for other deterministic waveforms.
    pub fn assumed_model(&self) -> SignalModel {
        if let Some(a) = &self.assumed {
            return a.clone();
        }
        match &self.truth {
            s @ (SignalModel::Ou { .. } | SignalModel::Wiener { .. }) => s.clone(),
            SignalModel::Constant { omega0 } => SignalModel::Wiener {
                omega0: *omega0,
                d_c: 0.0,
            },
            other => SignalModel::Wiener {
                omega0: other.nominal(),
                d_c: TRACKING_WIENER_DC,
            },
        }
    }

    pub fn filters(&self) -> Vec<FilterKind> {
        self.estimators.iter().filter_map(|e| e.filter_kind()).collect()
    }
}

/// n log-spaced points from `a` to `b` inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn round_trip_and_unknown_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = SweepAxis::N(vec![1e10, 1e12]);
        cfg.assumed = Some(SignalModel::Ou {
            omega_bar: 1.0,
            tau: 1.0,
            d_c: 1e7,
        });
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_json(r#"{"runz": 3}"#).unwrap_err().is_config());
        assert!(ExperimentConfig::from_json(r#"{"runs": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"axis": "time", "grid": []}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"sweep": {"axis": "delta", "grid": [5e-6]}, "params": {"N": 1e10}}"#).unwrap();
        assert_eq!(c.sweep, SweepAxis::Delta(vec![5e-6]));
        assert_eq!(c.params.n, 1e10);
    }

    #[test]
    fn assumed_defaults() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.assumed_model().diffusion(), 0.0);
        cfg.truth = SignalModel::Step {
            omega_bar: 5.0,
            jumps: vec![(1e-3, 6.0)],
        };
        assert_eq!(cfg.assumed_model(), SignalModel::Wiener { omega0: 5.0, d_c: 1e8 });
    }

    #[test]
    fn filter_prior_blocks() {
        let p = SpmParams::default();
        let pr = PriorSpec::default().filter(&p).unwrap();
        assert_eq!(pr.mean[2], 0.5 * p.n);
        assert_eq!(pr.cov[(0, 0)], (2.0 * PI * 2e3f64).powi(2));
        assert_eq!(pr.cov[(1, 1)], 0.01 * p.n * p.n);
        assert_eq!(pr.cov[(0, 1)], 0.0);
    }

    #[test]
    fn log_grid_ends() {
        let g = log_grid(5e-5, 5e-3, 16);
        assert_eq!(g.len(), 16);
        assert!((g[0] - 5e-5).abs() < 1e-18 && (g[15] - 5e-3).abs() < 1e-15);
        assert_eq!(log_grid(2.0, 3.0, 1), vec![2.0]);
    }
}
