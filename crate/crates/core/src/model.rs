//! Physical parameters of the magnetometer and the exact discretisation of
//! the linear spin subsystem.
//!
//! All quantities are SI: angular frequencies in rad/s, times in s, currents
//! in pA. Spin components are in units of the collective spin (ħ = 1).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experimental constants of the magnetometer.
///
/// JSON keys match the field names below exactly (`g_D`, `R`, `N`, ...);
/// any key that is absent takes the default of the reference experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpmParams {
    /// Nominal Larmor angular frequency, rad/s.
    pub omega_bar: f64,
    /// Measurement strength, pA per unit spin.
    #[serde(rename = "g_D")]
    pub g_d: f64,
    /// Photocurrent noise spectral density, pA²/Hz.
    #[serde(rename = "R")]
    pub r: f64,
    /// Atom number.
    #[serde(rename = "N")]
    pub n: f64,
    /// Per-atom thermal variance factor F(F+1)/3.
    pub q: f64,
    /// Linewidth contribution to 1/T₂, rad/s.
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    /// Spin-exchange contribution to 1/T₂ per atom, rad/s.
    pub alpha: f64,
    /// Sampling period, s.
    #[serde(rename = "Delta")]
    pub delta: f64,
    /// Coherence time, s. When set, `gamma` and `alpha` are ignored.
    #[serde(rename = "T2_override")]
    pub t2_override: Option<f64>,
}

impl Default for SpmParams {
    fn default() -> Self {
        Self {
            omega_bar: 2.0 * PI * 1e4,
            g_d: 0.00177,
            r: 96.0,
            n: 0.44e12,
            q: 0.25,
            gamma: 2.0 * PI * 658.5,
            alpha: 2.0 * PI * 3.5e-10,
            delta: 5e-6,
            t2_override: Some(0.87e-3),
        }
    }
}

impl SpmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameters(what.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("Delta must be positive and finite");
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return bad("N must be positive and finite");
        }
        // g_D, R and q may be zero: noiseless and signal-free scenarios.
        for (name, v) in [("g_D", self.g_d), ("R", self.r), ("q", self.q)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative and finite"));
            }
        }
        for (name, v) in [("Gamma", self.gamma), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative and finite"));
            }
        }
        if !self.omega_bar.is_finite() {
            return bad("omega_bar must be finite");
        }
        if let Some(t2) = self.t2_override {
            if !(t2 > 0.0) {
                return bad("T2_override must be strictly positive");
            }
        }
        coherence_time(self).map(|_| ())
    }

    pub fn t2(&self) -> f64 {
        coherence_time(self).expect("validated parameters")
    }

    /// Same parameters with the coherence time taken from Γ + αN.
    pub fn without_t2_override(mut self) -> Self {
        self.t2_override = None;
        self
    }
}

/// T₂ = 1/(Γ + αN), or the override when one is set.
pub fn coherence_time(p: &SpmParams) -> Result<f64> {
    if let Some(t2) = p.t2_override {
        if t2 > 0.0 {
            return Ok(t2);
        }
        return Err(Error::InvalidParameters("T2_override must be positive".into()));
    }
    let rate = p.gamma + p.alpha * p.n;
    if rate > 0.0 && rate.is_finite() {
        Ok(1.0 / rate)
    } else {
        Err(Error::InvalidParameters(format!(
            "Gamma + alpha*N = {rate} is not a positive decay rate"
        )))
    }
}

/// Atomic noise strength Q = qN/T₂, Hz.
pub fn atomic_noise_strength(p: &SpmParams) -> Result<f64> {
    Ok(p.q * p.n / coherence_time(p)?)
}

/// Variance of the sampled photocurrent noise, R/Δ.
pub fn measurement_noise_variance(p: &SpmParams) -> f64 {
    p.r / p.delta
}

/// A(ω) = e^{−Δ/T₂}·[[cos ωΔ, sin ωΔ], [−sin ωΔ, cos ωΔ]].
pub fn discrete_spin_transition(omega: f64, delta: f64, t2: f64) -> Matrix2<f64> {
    let decay = (-delta / t2).exp();
    let (s, c) = (omega * delta).sin_cos();
    Matrix2::new(c, s, -s, c) * decay
}

/// Standard deviation b of the exact discrete spin noise (noise matrix b·1).
pub fn discrete_spin_noise_std(q: f64, n: f64, delta: f64, t2: f64) -> f64 {
    (0.5 * q * n * -(-2.0 * delta / t2).exp_m1()).sqrt()
}

/// Law of the Larmor frequency ω(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalModel {
    Constant {
        omega0: f64,
    },
    /// dω = −(ω − ω̄)/τ dt + √d_c dW.
    #[serde(rename = "ou")]
    Ou {
        omega_bar: f64,
        tau: f64,
        d_c: f64,
    },
    /// dω = √d_c dW.
    Wiener {
        omega0: f64,
        d_c: f64,
    },
    /// ω̄ + amplitude·sin(2π·mod_freq·t).
    Sinusoid {
        omega_bar: f64,
        amplitude: f64,
        mod_freq: f64,
    },
    /// ω̄ until the first jump, then piecewise constant at the listed values.
    Step {
        omega_bar: f64,
        jumps: Vec<(f64, f64)>,
    },
}

impl SignalModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameters(what.to_string()));
        match self {
            SignalModel::Ou { tau, d_c, .. } => {
                if !(*tau > 0.0) {
                    return bad("OU tau must be positive");
                }
                if !(*d_c >= 0.0) {
                    return bad("OU d_c must be non-negative");
                }
            }
            SignalModel::Wiener { d_c, .. } => {
                if !(*d_c >= 0.0) {
                    return bad("Wiener d_c must be non-negative");
                }
            }
            SignalModel::Step { jumps, .. } => {
                if jumps.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("step jump times must be strictly increasing");
                }
            }
            SignalModel::Constant { .. } | SignalModel::Sinusoid { .. } => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SignalModel::Constant { .. } => "constant",
            SignalModel::Ou { .. } => "ou",
            SignalModel::Wiener { .. } => "wiener",
            SignalModel::Sinusoid { .. } => "sinusoid",
            SignalModel::Step { .. } => "step",
        }
    }

    /// Deterministic waveforms are injected into the state from outside.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            SignalModel::Constant { .. } | SignalModel::Sinusoid { .. } | SignalModel::Step { .. }
        )
    }

    /// ω(t) for deterministic waveforms, `None` for stochastic ones.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        match self {
            SignalModel::Constant { omega0 } => Some(*omega0),
            SignalModel::Sinusoid {
                omega_bar,
                amplitude,
                mod_freq,
            } => Some(omega_bar + amplitude * (2.0 * PI * mod_freq * t).sin()),
            SignalModel::Step { omega_bar, jumps } => Some(
                jumps
                    .iter()
                    .take_while(|(tj, _)| *tj <= t)
                    .last()
                    .map_or(*omega_bar, |(_, v)| *v),
            ),
            SignalModel::Ou { .. } | SignalModel::Wiener { .. } => None,
        }
    }

    /// Default ω at t = 0.
    pub fn start_value(&self) -> f64 {
        match self {
            SignalModel::Ou { omega_bar, .. } => *omega_bar,
            SignalModel::Wiener { omega0, .. } => *omega0,
            _ => self.value_at(0.0).expect("deterministic"),
        }
    }

    /// Reference level ω̄ (mean, nominal or starting value).
    pub fn nominal(&self) -> f64 {
        match self {
            SignalModel::Constant { omega0 } | SignalModel::Wiener { omega0, .. } => *omega0,
            SignalModel::Ou { omega_bar, .. }
            | SignalModel::Sinusoid { omega_bar, .. }
            | SignalModel::Step { omega_bar, .. } => *omega_bar,
        }
    }

    /// Drift of ω as a state component; zero for exogenous waveforms.
    pub fn omega_drift(&self, omega: f64) -> f64 {
        match self {
            SignalModel::Ou { omega_bar, tau, .. } => -(omega - omega_bar) / tau,
            _ => 0.0,
        }
    }

    /// ∂(omega_drift)/∂ω.
    pub fn omega_drift_slope(&self) -> f64 {
        match self {
            SignalModel::Ou { tau, .. } => -1.0 / tau,
            _ => 0.0,
        }
    }

    /// Diffusion coefficient d_c of ω, rad²/s³.
    pub fn diffusion(&self) -> f64 {
        match self {
            SignalModel::Ou { d_c, .. } | SignalModel::Wiener { d_c, .. } => *d_c,
            _ => 0.0,
        }
    }
}

/// Exact one-step law of the ω-component: ω' = φ·ω + offset + √d1·w.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalDiscrete {
    pub phi: f64,
    pub offset: f64,
    pub d1: f64,
}

pub fn signal_discrete_params(s: &SignalModel, delta: f64) -> Result<SignalDiscrete> {
    match s {
        SignalModel::Ou {
            omega_bar,
            tau,
            d_c,
        } => {
            let one_minus_phi = -(-delta / tau).exp_m1();
            Ok(SignalDiscrete {
                phi: 1.0 - one_minus_phi,
                offset: omega_bar * one_minus_phi,
                d1: 0.5 * tau * d_c * -(-2.0 * delta / tau).exp_m1(),
            })
        }
        SignalModel::Wiener { d_c, .. } => Ok(SignalDiscrete {
            phi: 1.0,
            offset: 0.0,
            d1: d_c * delta,
        }),
        other => Err(Error::UnsupportedSignal {
            context: "discrete signal dynamics",
            variant: other.name(),
        }),
    }
}

/// Gaussian prior N(mean, cov) over a `D`-dimensional block of the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior<const D: usize> {
    pub mean: SVector<f64, D>,
    pub cov: SMatrix<f64, D, D>,
}

impl<const D: usize> GaussianPrior<D> {
    pub fn new(mean: SVector<f64, D>, cov: SMatrix<f64, D, D>) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("prior must be finite".into()));
        }
        let scale = cov.amax();
        if (cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParameters("prior covariance not symmetric".into()));
        }
        if scale > 0.0 {
            let eig = SymmetricEigen::new(DMatrix::from_column_slice(D, D, cov.as_slice()));
            if eig.eigenvalues.min() < -1e-10 * scale {
                return Err(Error::InvalidParameters(
                    "prior covariance not positive semidefinite".into(),
                ));
            }
        }
        Ok(Self { mean, cov })
    }
}

impl GaussianPrior<1> {
    pub fn scalar(mean: f64, sigma: f64) -> Result<Self> {
        Self::new(SVector::<f64, 1>::new(mean), SMatrix::<f64, 1, 1>::new(sigma * sigma))
    }

    /// Improper flat prior; only its location is used (bracket centre).
    pub fn flat(mean: f64) -> Self {
        Self {
            mean: SVector::<f64, 1>::new(mean),
            cov: SMatrix::<f64, 1, 1>::new(f64::INFINITY),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mean[0]
    }

    pub fn sigma(&self) -> f64 {
        self.cov[(0, 0)].sqrt()
    }
}

impl GaussianPrior<2> {
    /// Spin prior centred on the pumped state (0, N/2) with covariance scale·N²·1.
    pub fn polarized(n: f64, cov_scale: f64) -> Self {
        Self {
            mean: SVector::<f64, 2>::new(0.0, 0.5 * n),
            cov: Matrix2::identity() * (cov_scale * n * n),
        }
    }
}
