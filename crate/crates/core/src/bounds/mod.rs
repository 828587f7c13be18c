//! Bayesian Cramér-Rao bounds.
//!
//! The numerical bound averages the squared score ∂_ω J over draws from the
//! joint law of (ω, record); the analytic expressions describe the noiseless
//! (q = 0) Fisher information of a decaying sinusoid observed in white noise.

pub mod quad;

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{coherence_time, GaussianPrior, SignalModel, SpmParams};
use crate::pem::{neg_log_joint_value, PemModel};
use crate::rng::{normal, RunStreams};
use crate::sde_sim::{simulate_with, MeasurementRecord, SimOptions};
use crate::stats::{jackknife_of_mean, mean};

/// Relative tolerance of the adaptive quadratures.
pub const QUAD_REL_TOL: f64 = 1e-12;
/// Gauss–Hermite nodes for prior averages.
pub const HERMITE_NODES: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    /// MSE bound, rad²/s².
    pub value: f64,
    /// Monte-Carlo standard error of `value` (0 for analytic bounds).
    pub mc_std_err: f64,
    pub t: f64,
    pub samples: usize,
    /// Central-difference step of the score, rad/s (0 for analytic bounds).
    pub h: f64,
    /// Scores whose step-halving did not settle within 6 halvings.
    pub unsettled: usize,
}

/// (J(ω + h) − J(ω − h)) / 2h.
pub fn neg_log_joint_gradient(
    omega: f64,
    rec: &MeasurementRecord,
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameters("difference step must be positive".into()));
    }
    let model = PemModel::new(p)?;
    central_difference(&model, omega, &rec.outcomes, prior_omega, prior_spin, h)
}

fn central_difference(
    model: &PemModel,
    omega: f64,
    outcomes: &[f64],
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    h: f64,
) -> Result<f64> {
    let jp = neg_log_joint_value(model, omega + h, outcomes, prior_omega, prior_spin)?;
    let jm = neg_log_joint_value(model, omega - h, outcomes, prior_omega, prior_spin)?;
    Ok((jp - jm) / (2.0 * h))
}

/// Score with step validation: halve h until successive estimates agree to
/// 1e-3 relative (or 1e-3/σ_ω absolute), at most 6 halvings.
/// Returns the score and whether it settled.
pub fn score_with_halving(
    model: &PemModel,
    omega: f64,
    outcomes: &[f64],
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    h0: f64,
) -> Result<(f64, bool)> {
    let floor = if prior_omega.sigma().is_finite() {
        1e-3 / prior_omega.sigma()
    } else {
        0.0
    };
    let mut h = h0;
    let mut g = central_difference(model, omega, outcomes, prior_omega, prior_spin, h)?;
    for _ in 0..6 {
        h *= 0.5;
        let g_half = central_difference(model, omega, outcomes, prior_omega, prior_spin, h)?;
        let change = (g - g_half).abs();
        if change <= 1e-3 * g_half.abs() || change <= floor {
            return Ok((g_half, true));
        }
        g = g_half;
    }
    Ok((g, false))
}

/// Monte-Carlo BCRB at time `t` from `m` draws ω ~ prior.
pub fn bcrb_numeric(
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    t: f64,
    m: usize,
    seed: u64,
) -> Result<BoundResult> {
    Ok(bcrb_numeric_at(p, prior_omega, prior_spin, &[t], m, seed, 5)?.remove(0))
}

/// Monte-Carlo BCRB at several times sharing the same draws: each record is
/// simulated once to max(times) and truncated.
pub fn bcrb_numeric_at(
    p: &SpmParams,
    prior_omega: &GaussianPrior<1>,
    prior_spin: &GaussianPrior<2>,
    times: &[f64],
    m: usize,
    seed: u64,
    substeps: usize,
) -> Result<Vec<BoundResult>> {
    if m < 2 {
        return Err(Error::TooFewSamples { need: 2, got: m });
    }
    if times.is_empty() || times.iter().any(|t| !(*t >= p.delta)) {
        return Err(Error::InvalidParameters("bound times must be at least Delta".into()));
    }
    let model = PemModel::new(p)?;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let h0 = 1e-4 * prior_omega.sigma();
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(Error::InvalidParameters("numeric BCRB needs a finite, positive sigma_omega".into()));
    }
    let ks: Vec<usize> = times.iter().map(|t| crate::sde_sim::sample_count(*t, p.delta)).collect();

    let per_sample: Vec<Vec<(f64, bool)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut streams = RunStreams::new(seed, i as u64);
            let omega = prior_omega.mu() + prior_omega.sigma() * normal(&mut streams.truth);
            let signal = SignalModel::Constant { omega0: omega };
            let opts = SimOptions::with_substeps(substeps);
            let (_, rec) = simulate_with(p, &signal, t_max, &opts, &mut streams)?;
            ks.iter()
                .map(|&k| score_with_halving(&model, omega, &rec.outcomes[..k], prior_omega, prior_spin, h0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let sq: Vec<f64> = per_sample.iter().map(|s| s[j].0 * s[j].0).collect();
            let info = mean(&sq);
            BoundResult {
                value: 1.0 / info,
                mc_std_err: jackknife_of_mean(&sq, |v| 1.0 / v),
                t,
                samples: m,
                h: h0,
                unsettled: per_sample.iter().filter(|s| !s[j].1).count(),
            }
        })
        .collect())
}

/// Prefactor N²g_D²/(4R) of the noiseless Fisher information.
fn fi_prefactor(p: &SpmParams) -> f64 {
    p.n * p.n * p.g_d * p.g_d / (4.0 * p.r)
}

/// Sampled Fisher information Δ·Σⱼ e^{−2tⱼ/T₂} tⱼ² sin²(ωtⱼ) · N²g²/(4R).
pub fn fi_noiseless_discrete(omega: f64, t: f64, p: &SpmParams) -> f64 {
    let t2 = p.t2();
    let k = crate::sde_sim::sample_count(t, p.delta);
    let sum: f64 = (1..=k)
        .map(|j| {
            let tj = j as f64 * p.delta;
            (-2.0 * tj / t2).exp() * tj * tj * (omega * tj).sin().powi(2)
        })
        .sum();
    fi_prefactor(p) * p.delta * sum
}

/// N²g²/(4R)·∫₀ᵗ e^{−2τ/T₂} τ² sin²(ωτ) dτ by adaptive quadrature.
pub fn fi_noiseless_continuous(omega: f64, t: f64, p: &SpmParams) -> Result<f64> {
    if omega == 0.0 || t <= 0.0 {
        return Ok(0.0);
    }
    let t2 = coherence_time(p)?;
    let rate = if t2.is_infinite() { 0.0 } else { 2.0 / t2 };
    let panel = (PI / omega.abs()).min(t);
    let v = quad::integrate(
        |tau| (-rate * tau).exp() * tau * tau * (omega * tau).sin().powi(2),
        0.0,
        t,
        QUAD_REL_TOL,
        panel,
    )?;
    Ok(fi_prefactor(p) * v)
}

/// g²N²ω²t⁵/(20R).
pub fn fi_short_time(omega: f64, t: f64, p: &SpmParams) -> f64 {
    p.g_d * p.g_d * p.n * p.n * omega * omega * t.powi(5) / (20.0 * p.r)
}

/// Limit t → ∞ of the continuous information.
pub fn fi_asymptotic(omega: f64, p: &SpmParams) -> f64 {
    let t2 = p.t2();
    let x2 = (omega * t2).powi(2);
    p.n * p.n * p.g_d * p.g_d * t2.powi(3) / (32.0 * p.r) * x2 * (x2 * x2 + 3.0 * x2 + 6.0)
        / (1.0 + x2).powi(3)
}

/// Closed form for T₂ → ∞: (g²N²/24R)·t³·{1 + 3a/(4(ωt)³)·sin(2ωt + φ)}.
pub fn fi_no_decoherence(omega: f64, t: f64, p: &SpmParams) -> f64 {
    let x = omega * t;
    let pre = p.g_d * p.g_d * p.n * p.n / (24.0 * p.r) * t.powi(3);
    let braces = if x.abs() < 0.5 {
        // 6·Σ (−1)^{n+1} 2^{2n−1} x^{2n} / ((2n)!(2n+3)); the closed form cancels here.
        let mut sum = 0.0;
        let mut term = 1.0; // x^{2n}/(2n)!
        let x2 = x * x;
        let mut pow2 = 0.5; // 2^{2n−1}
        for n in 1..30 {
            term *= x2 / ((2 * n - 1) * (2 * n)) as f64;
            pow2 *= 4.0;
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * pow2 * term / (2 * n + 3) as f64;
        }
        6.0 * sum
    } else {
        let a = ((1.0 - 2.0 * x * x).powi(2) + 4.0 * x * x).sqrt();
        let phi = (-2.0 * x).atan2(1.0 - 2.0 * x * x);
        1.0 + 3.0 * a / (4.0 * x.powi(3)) * (2.0 * x + phi).sin()
    };
    pre * braces
}

/// Frequentist bound 1/I_F(ω, t).
pub fn crb(omega: f64, t: f64, p: &SpmParams) -> Result<f64> {
    Ok(1.0 / fi_noiseless_continuous(omega, t, p)?)
}

/// (N²g²T₂³/(25.6R) + σ_ω⁻²)⁻¹, valid for any estimator at any time.
pub fn noiseless_bcrb_floor(p: &SpmParams, sigma_omega: f64) -> f64 {
    let t2 = p.t2();
    1.0 / (p.n * p.n * p.g_d * p.g_d * t2.powi(3) / (25.6 * p.r) + sigma_omega.powi(-2))
}

/// 1/(σ_ω⁻² + E[I_F(ω, t)]) with ω ~ N(ω̄, σ_ω²), by Gauss–Hermite.
pub fn bcrb_analytic_gaussian_prior(p: &SpmParams, sigma_omega: f64, t: f64) -> Result<f64> {
    let (x, w) = quad::gauss_hermite_normal(HERMITE_NODES);
    let mut e_fi = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        e_fi += wi * fi_noiseless_continuous(p.omega_bar + sigma_omega * xi, t, p)?;
    }
    Ok(1.0 / (sigma_omega.powi(-2) + e_fi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub t: f64,
    pub bound: f64,
    pub stderr: f64,
    pub kind: &'static str,
}

pub fn write_bound_csv<W: Write>(rows: &[BoundRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,bound,stderr,kind")?;
    for r in rows {
        writeln!(w, "{:.8e},{},{},{}", r.t, r.bound, r.stderr, r.kind)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::sde_sim::simulate;
    use approx::assert_relative_eq;

    const W0: f64 = 2.0 * PI * 1e4;

    fn table() -> SpmParams {
        SpmParams::default()
    }

    fn no_decay() -> SpmParams {
        SpmParams {
            t2_override: Some(f64::INFINITY),
            ..table()
        }
    }

    #[test]
    fn gradient_examples() {
        let p = table();
        let sp = GaussianPrior::<2>::polarized(p.n, 0.01);
        let prior = GaussianPrior::<1>::scalar(W0, 2.0 * PI * 2e3).unwrap();

        // Prior only: J(ω) = const + (ω − ω̄)²/2σ², exact under central differences.
        let p0 = SpmParams { g_d: 0.0, ..p };
        let (_, noise) = simulate(&p0, &SignalModel::Constant { omega0: W0 }, 2e-4, 5, 1).unwrap();
        let w = W0 + 1234.0;
        let g = neg_log_joint_gradient(w, &noise, &p0, &prior, &sp, 1.0).unwrap();
        assert_relative_eq!(g, 1234.0 / prior.cov[(0, 0)], max_relative = 1e-6);

        let (_, rec) = simulate(&p, &SignalModel::Constant { omega0: W0 }, 2e-4, 5, 1).unwrap();

        let model = PemModel::new(&p).unwrap();
        let h = 1e-4 * prior.sigma();
        let g: Vec<f64> = (0..3)
            .map(|i| central_difference(&model, W0, &rec.outcomes, &prior, &sp, h / 2f64.powi(i)).unwrap())
            .collect();
        // Second-order truncation: successive differences shrink fourfold.
        let ratio = (g[0] - g[1]) / (g[1] - g[2]);
        assert!((ratio - 4.0).abs() < 0.2, "{g:?}");
        let (s, settled) = score_with_halving(&model, W0, &rec.outcomes, &prior, &sp, h).unwrap();
        assert!(settled);
        let richardson = g[2] + (g[2] - g[1]) / 3.0;
        assert!((s - richardson).abs() <= 2e-3 * richardson.abs(), "{s} {richardson}");
        assert!(neg_log_joint_gradient(W0, &rec, &p, &prior, &sp, 0.0).is_err());
    }

    #[test]
    fn central_difference_exact_for_quadratic() {
        let f = |w: f64| 3.5 * (w - 2.0).powi(2);
        let h = 0.25;
        let g = (f(5.0 + h) - f(5.0 - h)) / (2.0 * h);
        assert_eq!(g, 21.0);
    }

    #[test]
    fn numeric_bcrb_is_reproducible_and_prior_limited() {
        let p = table();
        let sp = GaussianPrior::<2>::polarized(p.n, 0.01);
        let prior = GaussianPrior::<1>::scalar(W0, 2.0 * PI * 2e3).unwrap();
        let a = bcrb_numeric(&p, &prior, &sp, 1e-4, 2, 9).unwrap();
        let b = bcrb_numeric(&p, &prior, &sp, 1e-4, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(bcrb_numeric(&p, &prior, &sp, 1e-4, 1, 9).is_err());

        // A very narrow prior dominates the information: E[score²] → σ⁻², and
        // the prior part of the score alone has relative spread √(2/M).
        let tiny = GaussianPrior::<1>::scalar(W0, 1e-6).unwrap();
        let c = bcrb_numeric(&p, &tiny, &sp, 5e-5, 200, 3).unwrap();
        assert!((c.value - 1e-12).abs() <= 4.0 * c.mc_std_err, "{c:?}");
        assert!(c.mc_std_err < 0.2e-12);
    }

    #[test]
    fn discrete_fi_examples() {
        let p = table();
        let t2 = p.t2();
        let one = fi_noiseless_discrete(W0, p.delta, &p);
        let d = p.delta;
        let hand = p.n * p.n * p.g_d * p.g_d / (4.0 * p.r) * d * (-2.0 * d / t2).exp() * d * d * (W0 * d).sin().powi(2);
        assert_relative_eq!(one, hand, max_relative = 1e-14);

        let blind = PI / p.delta * 3.0;
        assert!(fi_noiseless_discrete(blind, 1e-3, &p) < 1e-20 * fi_noiseless_discrete(W0, 1e-3, &p));

        let fine = SpmParams { delta: 1e-7, ..p };
        let cont = fi_noiseless_continuous(W0, 1e-3, &p).unwrap();
        assert_relative_eq!(fi_noiseless_discrete(W0, 1e-3, &fine), cont, max_relative = 1e-3);
    }

    #[test]
    fn continuous_fi_limits() {
        let p = table();
        let t2 = p.t2();
        assert_eq!(fi_noiseless_continuous(0.0, 1e-3, &p).unwrap(), 0.0);
        let t = t2 / 1000.0;
        assert_relative_eq!(
            fi_noiseless_continuous(W0, t, &p).unwrap(),
            fi_short_time(W0, t, &p),
            max_relative = 0.01
        );
        assert_relative_eq!(
            fi_noiseless_continuous(W0, 50.0 * t2, &p).unwrap(),
            fi_asymptotic(W0, &p),
            max_relative = 1e-3
        );
        let mut last = 0.0;
        for i in 1..40 {
            let v = fi_noiseless_continuous(W0 * 0.37, i as f64 * 1e-4, &p).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn short_time_and_asymptote() {
        let p = table();
        assert_eq!(fi_short_time(W0, 0.0, &p), 0.0);
        assert_relative_eq!(fi_short_time(W0, 2e-5, &p), 32.0 * fi_short_time(W0, 1e-5, &p), max_relative = 1e-14);
        let lead = p.n * p.n * p.g_d * p.g_d * p.t2().powi(3) / (32.0 * p.r);
        assert_relative_eq!(fi_asymptotic(1e12, &p), lead, max_relative = 1e-9);
        let fast = SpmParams {
            t2_override: Some(1e-12),
            ..p
        };
        assert!(fi_asymptotic(W0, &fast) < 1e-30 * lead);
    }

    #[test]
    fn no_decoherence_form() {
        let p = no_decay();
        let t = 1e-2;
        assert_relative_eq!(
            fi_no_decoherence(W0, t, &p),
            p.g_d * p.g_d * p.n * p.n * t.powi(3) / (24.0 * p.r),
            max_relative = 0.01
        );
        for t in [1e-6, 3e-6, 1e-5, 7e-5, 1e-4, 1e-3, 1e-2] {
            let q = fi_noiseless_continuous(W0, t, &p).unwrap();
            assert_relative_eq!(fi_no_decoherence(W0, t, &p), q, max_relative = 1e-8);
        }
        let t = 1.0 / (1000.0 * W0);
        assert_relative_eq!(fi_no_decoherence(W0, t, &p), fi_short_time(W0, t, &p), max_relative = 0.01);
        // Both branches agree at the switch point.
        let x = 0.5 / W0;
        let lo = fi_no_decoherence(W0, x * (1.0 - 1e-12), &p);
        let hi = fi_no_decoherence(W0, x, &p);
        assert_relative_eq!(lo, hi, max_relative = 1e-9);
    }

    #[test]
    fn floor_examples() {
        let p = table();
        let t2 = p.t2();
        let inf = noiseless_bcrb_floor(&p, f64::INFINITY);
        assert_relative_eq!(inf, 25.6 * p.r / (p.n * p.n * p.g_d * p.g_d * t2.powi(3)), max_relative = 1e-14);
        let no_atoms = SpmParams { n: 1e-30, ..p };
        assert_relative_eq!(noiseless_bcrb_floor(&no_atoms, 3.0), 9.0, max_relative = 1e-12);
        let v = noiseless_bcrb_floor(&p, 2.0 * PI * 2e3);
        assert!(v > 1e-6 && v < 1e-4, "{v}");
    }

    #[test]
    fn analytic_bcrb_examples() {
        let p = table();
        let t = 1e-3;
        let s = 1e-3;
        let v = bcrb_analytic_gaussian_prior(&p, s, t).unwrap();
        let fi = fi_noiseless_continuous(p.omega_bar, t, &p).unwrap();
        assert_relative_eq!(v, 1.0 / (s.powi(-2) + fi), max_relative = 1e-9);

        let sigma = 2.0 * PI * 2e3;
        let a = bcrb_analytic_gaussian_prior(&p, sigma, t).unwrap();
        let mut rng = stream(12, 0, Purpose::Truth);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| fi_noiseless_continuous(p.omega_bar + sigma * normal(&mut rng), t, &p).unwrap())
            .collect();
        let mc = 1.0 / (sigma.powi(-2) + mean(&draws));
        assert_relative_eq!(a, mc, max_relative = 0.01);

        for (n, g) in [(1e10, 0.00177), (0.44e12, 0.00177), (1e13, 0.0005)] {
            let q = SpmParams { n, g_d: g, ..p };
            let late = bcrb_analytic_gaussian_prior(&q, sigma, 50.0 * q.t2()).unwrap();
            assert!(late >= noiseless_bcrb_floor(&q, sigma));
        }
        let late = bcrb_analytic_gaussian_prior(&p, sigma, 50.0 * p.t2()).unwrap();
        let floor = noiseless_bcrb_floor(&p, sigma);
        // The floor takes the maximum of the asymptotic information over ωT₂.
        assert!(late <= 1.3 * floor, "{late} {floor}");
    }

    #[test]
    fn information_adds() {
        let p = table();
        for t in [1e-4, 1e-3, 5e-3] {
            let fi = fi_noiseless_continuous(p.omega_bar, t, &p).unwrap();
            assert!(1.0 / fi >= 1.0 / (fi + 1e-8));
            assert_eq!(crb(p.omega_bar, t, &p).unwrap(), 1.0 / fi);
        }
    }

    #[test]
    fn bound_csv() {
        let rows = [BoundRow {
            t: 1e-3,
            bound: 2.5,
            stderr: 0.1,
            kind: "bcrb_numeric",
        }];
        let mut buf = Vec::new();
        write_bound_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,bound,stderr,kind\n1.00000000e-3,2.5,0.1,bcrb_numeric\n");
    }
}
