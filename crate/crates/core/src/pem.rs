//! Prediction-error method for a constant Larmor frequency.
//!
//! For fixed ω the spin subsystem is linear-Gaussian, so the exact
//! likelihood of the record follows from a 2-D Kalman filter. The MAP
//! estimate minimises the negative log-joint over a bracketed grid and then
//! refines by golden-section search.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    coherence_time, discrete_spin_noise_std, discrete_spin_transition, measurement_noise_variance,
    GaussianPrior, SpmParams,
};
use crate::sde_sim::MeasurementRecord;

/// Number of coarse grid points across the ±5σ_ω bracket.
pub const GRID_POINTS: usize = 201;
/// Absolute tolerance of the golden-section refinement, rad/s.
pub const OMEGA_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub omega: f64,
    /// J(ω) with additive constants dropped.
    pub neg_log_joint: f64,
    pub residuals: Vec<f64>,
    pub s: Vec<f64>,
}

/// Constants of the recursion that do not depend on ω.
#[derive(Debug, Clone, Copy)]
pub struct PemModel {
    pub delta: f64,
    pub t2: f64,
    pub b2: f64,
    pub r_meas: f64,
    pub g_d: f64,
}

impl PemModel {
    pub fn new(p: &SpmParams) -> Result<Self> {
        p.validate()?;
        let t2 = coherence_time(p)?;
        let b = discrete_spin_noise_std(p.q, p.n, p.delta, t2);
        Ok(Self {
            delta: p.delta,
            t2,
            b2: b * b,
            r_meas: measurement_noise_variance(p),
            g_d: p.g_d,
        })
    }

    /// Runs the recursion over `outcomes`, calling `visit(residual, S)` per step,
    /// and returns ½Σ(r²/S + ln S).
    fn recursion<F: FnMut(f64, f64)>(
        &self,
        omega: f64,
        outcomes: &[f64],
        prior_spin: &GaussianPrior<2>,
        mut visit: F,
    ) -> Result<f64> {
        let a = discrete_spin_transition(omega, self.delta, self.t2);
        let q = Matrix2::identity() * self.b2;
        let g = self.g_d;
        let mut m: Vector2<f64> = prior_spin.mean;
        let mut p: Matrix2<f64> = prior_spin.cov;
        let mut acc = 0.0;
        for (j, &y) in outcomes.iter().enumerate() {
            let m_pred = a * m;
            let p_pred = a * p * a.transpose() + q;
            let s = self.r_meas + g * g * p_pred[(1, 1)];
            if !(s > 0.0) {
                return Err(Error::Degenerate { step: j + 1, s });
            }
            let r = y - g * m_pred[1];
            let k = p_pred.column(1) * (g / s);
            let mut i_kh = Matrix2::<f64>::identity();
            i_kh[(0, 1)] -= k[0] * g;
            i_kh[(1, 1)] -= k[1] * g;
            m = m_pred + k * r;
            p = i_kh * p_pred * i_kh.transpose() + k * k.transpose() * self.r_meas;
            p = (p + p.transpose()) * 0.5;
            acc += 0.5 * (r * r / s + s.ln());
            visit(r, s);
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::NonFinite("negative log-likelihood"))
        }
    }
}

/// −ln p(ω) without its normalising constant, so a flat prior (σ = ∞) is 0.
pub fn neg_log_prior(omega: f64, prior: &GaussianPrior<1>) -> f64 {
    let var = prior.cov[(0, 0)];
    if var.is_infinite() {
        return 0.0;
    }
    let d = omega - prior.mu();
    0.5 * d * d / var
}

pub fn kalman_neg_log_joint(
    omega: f64,
    rec: &MeasurementRecord,
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
) -> Result<LikelihoodEval> {
    let model = PemModel::new(p)?;
    let mut residuals = Vec::with_capacity(rec.len());
    let mut s_all = Vec::with_capacity(rec.len());
    let nll = model.recursion(omega, &rec.outcomes, prior_spin, |r, s| {
        residuals.push(r);
        s_all.push(s);
    })?;
    Ok(LikelihoodEval {
        omega,
        neg_log_joint: nll + neg_log_prior(omega, prior_omega),
        residuals,
        s: s_all,
    })
}

/// Value-only J(ω) over the first `k` outcomes.
pub fn neg_log_joint_value(
    model: &PemModel,
    omega: f64,
    outcomes: &[f64],
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
) -> Result<f64> {
    Ok(model.recursion(omega, outcomes, prior_spin, |_, _| {})? + neg_log_prior(omega, prior_omega))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEstimate {
    pub omega_hat: f64,
    /// k⁻¹J at the minimiser.
    pub j_at_min: f64,
    /// Strict local minima found on the coarse grid.
    pub grid_minima: usize,
}

/// Golden-section minimisation of `f` on [lo, hi] down to width `tol`.
pub fn golden_section<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Strict interior local minima of a sampled profile.
pub fn count_local_minima(values: &[f64]) -> usize {
    values.windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
}

/// MAP estimate over the default bracket ω̄ ± 5σ_ω.
pub fn map_estimate(
    rec: &MeasurementRecord,
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
) -> Result<MapEstimate> {
    let mu = prior_omega.mu();
    let half = 5.0 * prior_omega.sigma();
    map_estimate_in(rec, p, prior_omega, prior_spin, (mu - half, mu + half))
}

pub fn map_estimate_in(
    rec: &MeasurementRecord,
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    bracket: (f64, f64),
) -> Result<MapEstimate> {
    if rec.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let (lo, hi) = bracket;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameters(format!("bad bracket [{lo}, {hi}]")));
    }
    let model = PemModel::new(p)?;
    let k = rec.len() as f64;
    let eval = |w: f64| neg_log_joint_value(&model, w, &rec.outcomes, prior_omega, prior_spin);

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + i as f64 * step).collect();
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&w| eval(w))
        .collect::<Result<Vec<f64>>>()?;

    // First strict minimum in ascending ω: ties go to the smaller ω.
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    if best == 0 || best == GRID_POINTS - 1 {
        return Err(Error::BoundaryMinimum { omega: grid[best] });
    }
    let (w_gs, j_gs) = golden_section(eval, grid[best - 1], grid[best + 1], OMEGA_TOL)?;
    // Keep the grid point unless refinement strictly improves on it; a flat
    // profile then returns the grid value instead of rounding noise.
    let (omega_hat, j_min) = if j_gs < values[best] {
        (w_gs, j_gs)
    } else {
        (grid[best], values[best])
    };
    Ok(MapEstimate {
        omega_hat,
        j_at_min: j_min / k,
        grid_minima: count_local_minima(&values),
    })
}
