//! Gauss quadrature rules and a panel-adaptive integrator.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on Pₙ.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Probabilists' Gauss–Hermite rule: Σ wᵢ g(xᵢ) ≈ E[g(Z)], Z ~ N(0, 1).
/// Golub–Welsch on the Jacobi matrix of the monic Hermite recurrence.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jm[(k - 1, k)] = b;
        jm[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise to remove eigensolver asymmetry.
    let m = pairs.len();
    for i in 0..m / 2 {
        let x = 0.5 * (pairs[m - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[m - 1 - i].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[m - 1 - i] = (x, w);
    }
    if m % 2 == 1 {
        pairs[m / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

struct Rule {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Self { x, w }
    }

    fn apply<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.x
            .iter()
            .zip(&self.w)
            .map(|(x, w)| w * f(c + r * x))
            .sum::<f64>()
            * r
    }
}

/// ∫ₐᵇ f with relative tolerance `rel_tol`.
///
/// The interval is first cut into panels no longer than `max_panel`
/// (use the half-period for oscillatory integrands); each panel is
/// bisected until the 16- and 32-point Gauss rules agree.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, max_panel: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let g16 = Rule::new(16);
    let g32 = Rule::new(32);
    let panels = ((b - a) / max_panel).ceil().clamp(1.0, 1e7) as usize;
    let width = (b - a) / panels as f64;
    let edges = |i: usize| if i == panels { b } else { a + i as f64 * width };

    let rough: Vec<f64> = (0..panels).map(|i| g32.apply(&f, edges(i), edges(i + 1))).collect();
    let scale: f64 = rough.iter().map(|v| v.abs()).sum();
    if !scale.is_finite() {
        return Err(Error::Quadrature("non-finite integrand".into()));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let abs_tol = rel_tol * scale;

    let mut total = 0.0;
    let mut stack: Vec<(f64, f64, usize)> = Vec::new();
    for i in (0..panels).rev() {
        stack.push((edges(i), edges(i + 1), 0));
    }
    while let Some((lo, hi, depth)) = stack.pop() {
        let coarse = g16.apply(&f, lo, hi);
        let fine = g32.apply(&f, lo, hi);
        let local_tol = abs_tol * (hi - lo) / (b - a);
        if (fine - coarse).abs() <= local_tol.max(4.0 * f64::EPSILON * fine.abs()) {
            total += fine;
        } else if depth >= 40 {
            return Err(Error::Quadrature(format!(
                "no convergence on [{lo:e}, {hi:e}]"
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 16, 32] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
            let deg = 2 * n - 1;
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert_relative_eq!(s, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite_normal(41);
        let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-11);
        assert_relative_eq!(m(6), 15.0, epsilon = 1e-10);
    }

    #[test]
    fn adaptive_oscillatory() {
        let w = 2.0 * std::f64::consts::PI * 1e4;
        let t = 1e-3;
        let v = integrate(|x| (w * x).sin().powi(2), 0.0, t, 1e-12, std::f64::consts::PI / w).unwrap();
        let exact = t / 2.0 - (2.0 * w * t).sin() / (4.0 * w);
        assert_relative_eq!(v, exact, max_relative = 1e-12);
        assert_eq!(integrate(|_| 0.0, 0.0, 1.0, 1e-10, 1.0).unwrap(), 0.0);
    }
}
