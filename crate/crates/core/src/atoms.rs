//! Atom-number estimation from steady-state measurement fluctuations.
//!
//! Long after the pump, ⟨J_z⟩ has decayed and the renormalised outcome
//! yₖ/g_D is zero-mean Gaussian with variance qN/2 + R/(g_D²Δ). Inverting
//! the sample variance gives N.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{coherence_time, discrete_spin_noise_std, discrete_spin_transition, SpmParams};
use crate::rng::{normal, RunStreams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomCountEstimate {
    pub n_hat: f64,
    pub sigma_n: f64,
    pub k_used: usize,
    /// Set when N̂ ≤ 0; the value is still returned unchanged.
    pub degenerate: bool,
}

/// Σ̂ = Σ yₖ²/(k−1), or the usual unbiased variance with `subtract_mean`.
pub fn steady_state_variance(samples: &[f64], subtract_mean: bool) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::TooFewSamples { need: 2, got: k });
    }
    let m = if subtract_mean {
        samples.iter().sum::<f64>() / k as f64
    } else {
        0.0
    };
    Ok(samples.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (k - 1) as f64)
}

/// R/(g_D²Δ): the photon shot noise in spin units.
fn renormalised_noise(p: &SpmParams) -> f64 {
    p.r / (p.g_d * p.g_d * p.delta)
}

/// Inverts the steady-state variance of `samples` (yₖ/g_D) for N.
///
/// The caller must ensure the samples are taken in steady state (t ≫ T₂).
pub fn estimate_atom_number(samples: &[f64], p: &SpmParams) -> Result<AtomCountEstimate> {
    estimate_from_variance(steady_state_variance(samples, false)?, samples.len(), p)
}

pub fn estimate_from_variance(sigma_hat: f64, k: usize, p: &SpmParams) -> Result<AtomCountEstimate> {
    if k < 2 {
        return Err(Error::TooFewSamples { need: 2, got: k });
    }
    if !(p.q > 0.0 && p.g_d > 0.0) {
        return Err(Error::InvalidParameters("atom counting needs q > 0 and g_D > 0".into()));
    }
    let noise = renormalised_noise(p);
    let n_hat = 2.0 / p.q * (sigma_hat - noise);
    let sigma_n = (2.0 / (k - 1) as f64).sqrt() * (n_hat + 2.0 * noise / p.q);
    Ok(AtomCountEstimate {
        n_hat,
        sigma_n,
        k_used: k,
        degenerate: n_hat <= 0.0,
    })
}

/// σ_N̂ evaluated at the true N, for comparing against Monte-Carlo spread.
pub fn predicted_sigma_n(p: &SpmParams, k: usize) -> f64 {
    (2.0 / (k - 1) as f64).sqrt() * (p.n + 2.0 * renormalised_noise(p) / p.q)
}

/// How the steady state is reached before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStart {
    /// Thermal spin, each component N(0, qN/2): already stationary.
    #[default]
    Thermal,
    /// Pumped state (0, N/2) evolved freely until its mean has decayed below
    /// 1e-3 of the stationary standard deviation.
    Pumped,
}

/// Draws `k` renormalised steady-state outcomes yₖ/g_D at constant ω.
///
/// Spin propagation is exact, so the stationary law is preserved at any Δ.
pub fn sample_steady_state(
    p: &SpmParams,
    omega: f64,
    k: usize,
    start: SteadyStart,
    streams: &mut RunStreams,
) -> Result<Vec<f64>> {
    p.validate()?;
    if !(p.g_d > 0.0) {
        return Err(Error::InvalidParameters("g_D must be positive to renormalise outcomes".into()));
    }
    let t2 = coherence_time(p)?;
    let a = discrete_spin_transition(omega, p.delta, t2);
    let b = discrete_spin_noise_std(p.q, p.n, p.delta, t2);
    let meas = renormalised_noise(p).sqrt();

    let mut j = match start {
        SteadyStart::Thermal => {
            let s = (0.5 * p.q * p.n).sqrt();
            Vector2::new(s * normal(&mut streams.aux), s * normal(&mut streams.aux))
        }
        SteadyStart::Pumped => {
            let mut j = Vector2::new(0.0, 0.5 * p.n);
            // 10 T₂ leaves (N/2)e⁻¹⁰ ≫ √(qN/2) at realistic N.
            let stationary = (0.5 * p.q * p.n).sqrt();
            let decays = (0.5 * p.n / (1e-3 * stationary)).ln().max(10.0);
            let burn = (decays * t2 / p.delta).ceil() as usize;
            for _ in 0..burn {
                j = a * j + Vector2::new(normal(&mut streams.state), normal(&mut streams.state)) * b;
            }
            j
        }
    };
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        j = a * j + Vector2::new(normal(&mut streams.state), normal(&mut streams.state)) * b;
        out.push(j[1] + meas * normal(&mut streams.meas));
    }
    Ok(out)
}
