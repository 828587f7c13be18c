//! Strong-order study on the constant-ω linear spin SDE.
//!
//! For each path the Brownian motion is sampled exactly at the finest level
//! δ together with its time integral and the exact stochastic convolution
//! `I = ∫ e^{A_c(δ−u)} dW(u)`. Coarser levels aggregate the same path, so
//! every scheme and the exact solution see identical noise.

use nalgebra::{Complex, Matrix2, SMatrix, SVector, Vector2, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{atomic_noise_strength, coherence_time, discrete_spin_transition, SignalModel, SpmParams};
use crate::rng::{normal, stream, Purpose};
use crate::sde_sim::SdeModel;
use crate::stats::loglog_slope;

/// Fine-level increments over one interval: exact convolution, ∫dW, ∫(δ−u)dW.
#[derive(Debug, Clone, Copy)]
struct Increment {
    conv: Vector2<f64>,
    dw: Vector2<f64>,
    dz: Vector2<f64>,
}

/// ∫₀^δ vⁿ e^{λv} dv for n ∈ {0, 1}.
fn moment(lambda: Complex<f64>, delta: f64, n: i32) -> Complex<f64> {
    let z = lambda * delta;
    if z.norm() < 1.0 {
        // δ^{n+1} Σ_k z^k / (k! (n + k + 1))
        let mut term = Complex::new(1.0, 0.0);
        let mut sum = Complex::new(0.0, 0.0);
        for k in 0..40 {
            if k > 0 {
                term = term * z / k as f64;
            }
            sum += term / (n + k + 1) as f64;
        }
        sum * delta.powi(n + 1)
    } else {
        let e = z.exp();
        match n {
            0 => (e - 1.0) / lambda,
            _ => (e * (z - 1.0) + 1.0) / (lambda * lambda),
        }
    }
}

/// Rotation-like block [[Re, Im], [−Im, Re]] of a complex moment.
fn block(c: Complex<f64>) -> Matrix2<f64> {
    Matrix2::new(c.re, c.im, -c.im, c.re)
}

/// Cholesky factor of the joint covariance of (I, ΔW, ΔZ) for unit noise.
fn joint_factor(omega: f64, t2: f64, delta: f64) -> Result<SMatrix<f64, 6, 6>> {
    let gamma = 1.0 / t2;
    let lambda = Complex::new(-gamma, omega);
    let var_i = -(-2.0 * gamma * delta).exp_m1() / (2.0 * gamma);
    let c_iw = block(moment(lambda, delta, 0));
    let c_iz = block(moment(lambda, delta, 1));

    let mut c = SMatrix::<f64, 6, 6>::zeros();
    let id = Matrix2::<f64>::identity();
    c.fixed_view_mut::<2, 2>(0, 0).copy_from(&(id * var_i));
    c.fixed_view_mut::<2, 2>(0, 2).copy_from(&c_iw);
    c.fixed_view_mut::<2, 2>(2, 0).copy_from(&c_iw.transpose());
    c.fixed_view_mut::<2, 2>(0, 4).copy_from(&c_iz);
    c.fixed_view_mut::<2, 2>(4, 0).copy_from(&c_iz.transpose());
    c.fixed_view_mut::<2, 2>(2, 2).copy_from(&(id * delta));
    c.fixed_view_mut::<2, 2>(2, 4).copy_from(&(id * (0.5 * delta * delta)));
    c.fixed_view_mut::<2, 2>(4, 2).copy_from(&(id * (0.5 * delta * delta)));
    c.fixed_view_mut::<2, 2>(4, 4).copy_from(&(id * (delta.powi(3) / 3.0)));

    // Factor in unit-variance coordinates; the raw matrix spans many decades.
    let scale = SVector::<f64, 6>::from_fn(|i, _| c[(i, i)].sqrt());
    let corr = SMatrix::<f64, 6, 6>::from_fn(|i, j| c[(i, j)] / (scale[i] * scale[j]));
    let l = corr
        .cholesky()
        .ok_or(Error::Cholesky { eps: 0.0 })?
        .l();
    Ok(SMatrix::<f64, 6, 6>::from_fn(|i, j| scale[i] * l[(i, j)]))
}

fn sample_increment<R: Rng + ?Sized>(l: &SMatrix<f64, 6, 6>, rng: &mut R) -> Increment {
    let z = SVector::<f64, 6>::from_fn(|_, _| normal(rng));
    let v = l * z;
    Increment {
        conv: Vector2::new(v[0], v[1]),
        dw: Vector2::new(v[2], v[3]),
        dz: Vector2::new(v[4], v[5]),
    }
}

/// Merges consecutive increments of length `len` each.
fn aggregate(a: &Increment, b: &Increment, len: f64, a_len: &Matrix2<f64>) -> Increment {
    Increment {
        conv: a_len * a.conv + b.conv,
        dw: a.dw + b.dw,
        dz: a.dz + a.dw * len + b.dz,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub step_sizes: Vec<f64>,
    pub rms_ito_taylor: Vec<f64>,
    pub rms_euler: Vec<f64>,
    pub slope_ito_taylor: f64,
    pub slope_euler: f64,
}

/// Endpoint RMS errors over `paths` shared Brownian paths at step sizes
/// Δ, Δ/2, …, Δ/2^(levels−1), integrating from `j0` to `horizon`.
///
/// With `j0 = 0` the error is purely stochastic; from the pumped state the
/// deterministic truncation error of each scheme adds to it.
pub fn strong_order_study(
    p: &SpmParams,
    omega: f64,
    j0: Vector2<f64>,
    horizon: f64,
    levels: usize,
    paths: usize,
    seed: u64,
) -> Result<ConvergenceStudy> {
    if levels < 2 || paths < 2 {
        return Err(Error::InvalidParameters("need at least 2 levels and 2 paths".into()));
    }
    let t2 = coherence_time(p)?;
    let sqrt_q = atomic_noise_strength(p)?.sqrt();
    let signal = SignalModel::Constant { omega0: omega };
    let model = SdeModel::new(p, &signal)?;

    let coarse_steps = (horizon / p.delta).round() as usize;
    if coarse_steps == 0 {
        return Err(Error::InvalidParameters("horizon shorter than Delta".into()));
    }
    let fine_per_coarse = 1usize << (levels - 1);
    let fine = p.delta / fine_per_coarse as f64;
    let n_fine = coarse_steps * fine_per_coarse;
    let factor = joint_factor(omega, t2, fine)?;
    let exact_mean = discrete_spin_transition(omega, n_fine as f64 * fine, t2) * j0;

    let mut sq_it = vec![0.0; levels];
    let mut sq_em = vec![0.0; levels];
    let mut step_sizes = Vec::with_capacity(levels);
    for lvl in 0..levels {
        step_sizes.push(fine * (1usize << lvl) as f64);
    }

    for path in 0..paths {
        let mut rng = stream(seed, path as u64, Purpose::StateNoise);
        let mut incs: Vec<Increment> = (0..n_fine).map(|_| sample_increment(&factor, &mut rng)).collect();

        let mut exact_noise = Vector2::zeros();
        let a_fine = discrete_spin_transition(omega, fine, t2);
        for inc in &incs {
            exact_noise = a_fine * exact_noise + inc.conv;
        }
        let exact = exact_mean + exact_noise * sqrt_q;

        for lvl in 0..levels {
            let h = step_sizes[lvl];
            let mut x_it = Vector3::new(omega, j0[0], j0[1]);
            let mut x_em = x_it;
            for inc in &incs {
                let xi = Vector3::new(0.0, inc.dw[0], inc.dw[1]);
                let zeta = Vector3::new(0.0, inc.dz[0], inc.dz[1]);
                x_it = model.ito_taylor_step(&x_it, h, &xi, &zeta);
                x_em = model.euler_step(&x_em, h, &xi);
            }
            let e_it = Vector2::new(x_it[1], x_it[2]) - exact;
            let e_em = Vector2::new(x_em[1], x_em[2]) - exact;
            sq_it[lvl] += e_it.norm_squared();
            sq_em[lvl] += e_em.norm_squared();

            if lvl + 1 < levels {
                let a_h = discrete_spin_transition(omega, h, t2);
                incs = incs
                    .chunks_exact(2)
                    .map(|c| aggregate(&c[0], &c[1], h, &a_h))
                    .collect();
            }
        }
    }

    let rms = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|s| (s / paths as f64).sqrt()).collect() };
    let rms_it = rms(sq_it);
    let rms_em = rms(sq_em);
    Ok(ConvergenceStudy {
        slope_ito_taylor: loglog_slope(&step_sizes, &rms_it),
        slope_euler: loglog_slope(&step_sizes, &rms_em),
        step_sizes,
        rms_ito_taylor: rms_it,
        rms_euler: rms_em,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn moments_match_closed_form() {
        let lambda = Complex::new(-1149.0, 2.0 * PI * 1e4);
        for delta in [1e-7, 5e-6, 1e-4] {
            let z = lambda * delta;
            let m0 = (z.exp() - 1.0) / lambda;
            let m1 = (z.exp() * (z - 1.0) + 1.0) / (lambda * lambda);
            assert_relative_eq!(moment(lambda, delta, 0).re, m0.re, max_relative = 1e-8);
            assert_relative_eq!(moment(lambda, delta, 0).im, m0.im, max_relative = 1e-8);
            assert_relative_eq!(moment(lambda, delta, 1).re, m1.re, max_relative = 1e-6);
            assert_relative_eq!(moment(lambda, delta, 1).im, m1.im, max_relative = 1e-6);
        }
    }

    #[test]
    fn aggregated_increments_have_exact_law() {
        // Two aggregated fine steps must have the joint covariance of one coarse step.
        let (w, t2, d) = (2.0 * PI * 1e4, 0.87e-3, 2.5e-6);
        let lf = joint_factor(w, t2, d).unwrap();
        let lc = joint_factor(w, t2, 2.0 * d).unwrap();
        let cov_c = lc * lc.transpose();
        let a = discrete_spin_transition(w, d, t2);
        // Linear map from the two fine 6-vectors to the aggregated 6-vector.
        let mut m = SMatrix::<f64, 6, 12>::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
        m.fixed_view_mut::<2, 2>(0, 6).copy_from(&Matrix2::identity());
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&Matrix2::identity());
        m.fixed_view_mut::<2, 2>(2, 8).copy_from(&Matrix2::identity());
        m.fixed_view_mut::<2, 2>(4, 2).copy_from(&(Matrix2::identity() * d));
        m.fixed_view_mut::<2, 2>(4, 4).copy_from(&Matrix2::identity());
        m.fixed_view_mut::<2, 2>(4, 10).copy_from(&Matrix2::identity());
        let cf = lf * lf.transpose();
        let mut big = SMatrix::<f64, 12, 12>::zeros();
        big.fixed_view_mut::<6, 6>(0, 0).copy_from(&cf);
        big.fixed_view_mut::<6, 6>(6, 6).copy_from(&cf);
        let agg = m * big * m.transpose();
        for i in 0..6 {
            for j in 0..6 {
                let s = (cov_c[(i, i)] * cov_c[(j, j)]).sqrt();
                assert!((agg[(i, j)] - cov_c[(i, j)]).abs() < 1e-9 * s, "({i},{j})");
            }
        }
    }

    #[test]
    fn orders_on_small_study() {
        let p = SpmParams::default();
        for j0 in [Vector2::zeros(), Vector2::new(0.0, 0.5 * p.n)] {
            let st = strong_order_study(&p, 2.0 * PI * 1e4, j0, 16.0 * p.delta, 4, 20, 1).unwrap();
            assert!(st.slope_ito_taylor >= 1.4, "{st:?}");
            assert!((0.8..=1.2).contains(&st.slope_euler), "{st:?}");
        }
    }
}
