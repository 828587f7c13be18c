//! Ground-truth trajectories of the extended state `[ω, J_y, J_z]` and the
//! synthetic photocurrent record.
//!
//! The spin obeys
//!
//! ```text
//! dJ_y = (−J_y/T₂ + ω J_z) dt + √Q dW_y
//! dJ_z = (−J_z/T₂ − ω J_y) dt + √Q dW_z
//! ```
//!
//! and ω is either a diffusion (OU, Wiener) or an exogenous waveform that is
//! written into the state at every substep.

pub mod convergence;

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    atomic_noise_strength, coherence_time, discrete_spin_noise_std, discrete_spin_transition,
    measurement_noise_variance, SignalModel, SpmParams,
};
use crate::rng::{normal, RunStreams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub omega: f64,
    pub j_y: f64,
    pub j_z: f64,
}

impl ExtendedState {
    pub fn new(omega: f64, j_y: f64, j_z: f64) -> Self {
        Self { omega, j_y, j_z }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.omega, self.j_y, self.j_z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite() && self.j_y.is_finite() && self.j_z.is_finite()
    }
}

/// States sampled at t = kΔ, k = 0..=K.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ExtendedState>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,omega,j_y,j_z")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.8e},{},{},{}", x.omega, x.j_y, x.j_z)?;
        }
        Ok(())
    }
}

/// Photocurrent outcomes y_k at t_k = kΔ, k = 1..=K.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub delta: f64,
    pub outcomes: Vec<f64>,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Time of the outcome stored at `index` (zero-based).
    pub fn time(&self, index: usize) -> f64 {
        (index + 1) as f64 * self.delta
    }

    /// The first `k` outcomes.
    pub fn truncated(&self, k: usize) -> MeasurementRecord {
        MeasurementRecord {
            delta: self.delta,
            outcomes: self.outcomes[..k.min(self.len())].to_vec(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,y")?;
        for (i, y) in self.outcomes.iter().enumerate() {
            writeln!(w, "{:.8e},{y}", self.time(i))?;
        }
        Ok(())
    }

    /// Parses the `t,y` format. Δ is taken from the first time stamp.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::EmptyRecord)??;
        if header.trim() != "t,y" {
            return Err(Error::Config(format!("unexpected record header {header:?}")));
        }
        let mut times = Vec::new();
        let mut outcomes = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("bad record line {}", n + 2)))
            };
            let mut it = line.split(',');
            times.push(parse(it.next())?);
            outcomes.push(parse(it.next())?);
        }
        let delta = *times.first().ok_or(Error::EmptyRecord)?;
        if !(delta > 0.0) {
            return Err(Error::Config("record times must start at Delta > 0".into()));
        }
        Ok(Self { delta, outcomes })
    }
}

/// Drift and diffusion of the extended state with T₂ and Q resolved.
#[derive(Debug, Clone, Copy)]
pub struct SdeModel<'a> {
    pub t2: f64,
    /// Q, the spin noise intensity.
    pub q_strength: f64,
    pub signal: &'a SignalModel,
}

impl<'a> SdeModel<'a> {
    pub fn new(p: &SpmParams, s: &'a SignalModel) -> Result<Self> {
        Ok(Self {
            t2: coherence_time(p)?,
            q_strength: atomic_noise_strength(p)?,
            signal: s,
        })
    }

    pub fn drift(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let g = 1.0 / self.t2;
        Vector3::new(
            self.signal.omega_drift(x[0]),
            -g * x[1] + x[0] * x[2],
            -g * x[2] - x[0] * x[1],
        )
    }

    pub fn jacobian(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let g = 1.0 / self.t2;
        Matrix3::new(
            self.signal.omega_drift_slope(), 0.0, 0.0,
            x[2], -g, x[0],
            -x[1], -x[0], -g,
        )
    }

    /// Hessians ∂²f_r/∂x_j∂x_l, one matrix per drift component.
    pub fn hessians(&self) -> [Matrix3<f64>; 3] {
        let mut h2 = Matrix3::zeros();
        h2[(0, 2)] = 1.0;
        h2[(2, 0)] = 1.0;
        let mut h3 = Matrix3::zeros();
        h3[(0, 1)] = -1.0;
        h3[(1, 0)] = -1.0;
        [Matrix3::zeros(), h2, h3]
    }

    /// Diagonal of Q̃ = diag(√d_c, √Q, √Q).
    pub fn noise_diag(&self) -> Vector3<f64> {
        let q = self.q_strength.sqrt();
        Vector3::new(self.signal.diffusion().sqrt(), q, q)
    }

    /// b_r = ½ Σ_{j,l} (D_c)_{jl} ∂²f_r/∂x_j∂x_l with D_c = Q̃Q̃ᵀ.
    pub fn b_vector(&self) -> Vector3<f64> {
        let qd = self.noise_diag();
        let dc = Matrix3::from_diagonal(&qd.component_mul(&qd));
        let hs = self.hessians();
        Vector3::from_fn(|r, _| 0.5 * dc.component_mul(&hs[r]).sum())
    }

    /// One Itô-Taylor 1.5 step with prescribed correlated increments.
    pub fn ito_taylor_step(
        &self,
        x: &Vector3<f64>,
        h: f64,
        xi: &Vector3<f64>,
        zeta: &Vector3<f64>,
    ) -> Vector3<f64> {
        let f = self.drift(x);
        let jac = self.jacobian(x);
        let qd = self.noise_diag();
        x + f * h
            + (jac * f + self.b_vector()) * (0.5 * h * h)
            + qd.component_mul(xi)
            + jac * qd.component_mul(zeta)
    }

    pub fn euler_step(&self, x: &Vector3<f64>, h: f64, dw: &Vector3<f64>) -> Vector3<f64> {
        x + self.drift(x) * h + self.noise_diag().component_mul(dw)
    }
}

pub fn drift(_t: f64, x: &ExtendedState, p: &SpmParams, s: &SignalModel) -> Result<Vector3<f64>> {
    Ok(SdeModel::new(p, s)?.drift(&x.to_vector()))
}

pub fn drift_jacobian(
    _t: f64,
    x: &ExtendedState,
    p: &SpmParams,
    s: &SignalModel,
) -> Result<Matrix3<f64>> {
    Ok(SdeModel::new(p, s)?.jacobian(&x.to_vector()))
}

/// (ξ, ζ) from two standard normal 3-vectors: ξ ~ ∫dW, ζ ~ ∫∫dW ds.
pub fn correlated_increments(h: f64, z1: &Vector3<f64>, z2: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let xi = (z1 * 3f64.sqrt() + z2) * (0.5 * h.sqrt());
    let zeta = z1 * (h.powf(1.5) / 3f64.sqrt());
    (xi, zeta)
}

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng))
}

fn check(x: Vector3<f64>, t: f64) -> Result<Vector3<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::IntegrationBlowup { t })
    }
}

/// Consumes six standard normals per call.
pub fn ito_taylor_1p5_step<R: Rng + ?Sized>(
    x: &ExtendedState,
    h: f64,
    p: &SpmParams,
    s: &SignalModel,
    rng: &mut R,
) -> Result<ExtendedState> {
    let m = SdeModel::new(p, s)?;
    let z1 = normal3(rng);
    let z2 = normal3(rng);
    let (xi, zeta) = correlated_increments(h, &z1, &z2);
    let out = check(m.ito_taylor_step(&x.to_vector(), h, &xi, &zeta), h)?;
    Ok(ExtendedState::from_vector(&out))
}

/// Consumes three standard normals per call.
pub fn euler_maruyama_step<R: Rng + ?Sized>(
    x: &ExtendedState,
    h: f64,
    p: &SpmParams,
    s: &SignalModel,
    rng: &mut R,
) -> Result<ExtendedState> {
    let m = SdeModel::new(p, s)?;
    let dw = normal3(rng) * h.sqrt();
    let out = check(m.euler_step(&x.to_vector(), h, &dw), h)?;
    Ok(ExtendedState::from_vector(&out))
}

/// j' = A(ω, h)·j + b(h)·w. Consumes two standard normals per call.
pub fn exact_linear_step<R: Rng + ?Sized>(
    j: &Vector2<f64>,
    omega: f64,
    h: f64,
    p: &SpmParams,
    rng: &mut R,
) -> Result<Vector2<f64>> {
    let t2 = coherence_time(p)?;
    let w = Vector2::new(normal(rng), normal(rng));
    Ok(exact_linear_step_with(j, omega, h, t2, p.q * p.n, &w))
}

pub fn exact_linear_step_with(
    j: &Vector2<f64>,
    omega: f64,
    h: f64,
    t2: f64,
    qn: f64,
    w: &Vector2<f64>,
) -> Vector2<f64> {
    discrete_spin_transition(omega, h, t2) * j + w * discrete_spin_noise_std(qn, 1.0, h, t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    ItoTaylor15,
    EulerMaruyama,
    /// Exact spin propagation with ω frozen over each substep. Deterministic
    /// signals only.
    ExactSpin,
}

impl Integrator {
    /// Exact spin propagation for exogenous ω, Itô-Taylor 1.5 otherwise.
    pub fn auto(s: &SignalModel) -> Self {
        if s.is_deterministic() {
            Integrator::ExactSpin
        } else {
            Integrator::ItoTaylor15
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub substeps: usize,
    /// `None` picks [`Integrator::auto`].
    pub integrator: Option<Integrator>,
    /// Starting ω for OU/Wiener; deterministic signals ignore it.
    pub omega0: Option<f64>,
    /// Starting spin; defaults to the pumped state (0, N/2).
    pub spin0: Option<Vector2<f64>>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            substeps: 5,
            integrator: None,
            omega0: None,
            spin0: None,
        }
    }
}

impl SimOptions {
    pub fn with_substeps(substeps: usize) -> Self {
        Self {
            substeps,
            ..Self::default()
        }
    }
}

/// Number of whole samples in `duration`, tolerant to rounding of kΔ.
pub fn sample_count(duration: f64, delta: f64) -> usize {
    (duration / delta * (1.0 + 1e-12)).floor() as usize
}

/// Simulates with streams derived from `seed` as run 0.
pub fn simulate(
    p: &SpmParams,
    s: &SignalModel,
    duration: f64,
    substeps: usize,
    seed: u64,
) -> Result<(Trajectory, MeasurementRecord)> {
    let mut streams = RunStreams::new(seed, 0);
    simulate_with(p, s, duration, &SimOptions::with_substeps(substeps), &mut streams)
}

pub fn simulate_with(
    p: &SpmParams,
    s: &SignalModel,
    duration: f64,
    opts: &SimOptions,
    streams: &mut RunStreams,
) -> Result<(Trajectory, MeasurementRecord)> {
    p.validate()?;
    s.validate()?;
    if opts.substeps == 0 {
        return Err(Error::InvalidParameters("substeps must be at least 1".into()));
    }
    let k_total = sample_count(duration, p.delta);
    if k_total == 0 {
        return Err(Error::InvalidParameters("duration must be at least Delta".into()));
    }
    let integrator = opts.integrator.unwrap_or_else(|| Integrator::auto(s));
    if integrator == Integrator::ExactSpin && !s.is_deterministic() {
        return Err(Error::UnsupportedSignal {
            context: "exact spin propagation",
            variant: s.name(),
        });
    }
    let model = SdeModel::new(p, s)?;
    let h = p.delta / opts.substeps as f64;
    let meas_std = measurement_noise_variance(p).sqrt();
    let spin_b = discrete_spin_noise_std(p.q, p.n, h, model.t2);
    let exogenous = s.is_deterministic();

    let spin0 = opts.spin0.unwrap_or_else(|| Vector2::new(0.0, 0.5 * p.n));
    let omega0 = if exogenous {
        s.start_value()
    } else {
        opts.omega0.unwrap_or_else(|| s.start_value())
    };
    let mut x = Vector3::new(omega0, spin0[0], spin0[1]);

    let mut traj = Trajectory {
        times: Vec::with_capacity(k_total + 1),
        states: Vec::with_capacity(k_total + 1),
    };
    traj.times.push(0.0);
    traj.states.push(ExtendedState::from_vector(&x));
    let mut outcomes = Vec::with_capacity(k_total);

    let mut cached: Option<(f64, nalgebra::Matrix2<f64>)> = None;
    let rng = &mut streams.state;
    for k in 1..=k_total {
        for sub in 0..opts.substeps {
            let t = ((k - 1) * opts.substeps + sub) as f64 * h;
            if exogenous {
                x[0] = s.value_at(t).expect("deterministic signal");
            }
            x = match integrator {
                Integrator::ItoTaylor15 => {
                    let z1 = normal3(rng);
                    let z2 = normal3(rng);
                    let (xi, zeta) = correlated_increments(h, &z1, &z2);
                    model.ito_taylor_step(&x, h, &xi, &zeta)
                }
                Integrator::EulerMaruyama => {
                    let dw = normal3(rng) * h.sqrt();
                    model.euler_step(&x, h, &dw)
                }
                Integrator::ExactSpin => {
                    let a = match cached {
                        Some((w, a)) if w == x[0] => a,
                        _ => {
                            let a = discrete_spin_transition(x[0], h, model.t2);
                            cached = Some((x[0], a));
                            a
                        }
                    };
                    let w = Vector2::new(normal(rng), normal(rng));
                    let j = a * Vector2::new(x[1], x[2]) + w * spin_b;
                    Vector3::new(x[0], j[0], j[1])
                }
            };
        }
        let t = k as f64 * p.delta;
        if exogenous {
            x[0] = s.value_at(t).expect("deterministic signal");
        }
        let x_checked = check(x, t)?;
        outcomes.push(p.g_d * x_checked[2] + meas_std * normal(&mut streams.meas));
        traj.times.push(t);
        traj.states.push(ExtendedState::from_vector(&x_checked));
    }

    Ok((
        traj,
        MeasurementRecord {
            delta: p.delta,
            outcomes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::rng::Purpose;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn table() -> SpmParams {
        SpmParams::default()
    }

    fn constant(w: f64) -> SignalModel {
        SignalModel::Constant { omega0: w }
    }

    #[test]
    fn drift_examples() {
        let p = table();
        let n = p.n;
        let d = drift(0.0, &ExtendedState::new(0.0, 0.0, n / 2.0), &p, &constant(0.0)).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert_relative_eq!(d[2], -n / (2.0 * p.t2()));

        let ou = SignalModel::Ou {
            omega_bar: 2.0 * PI * 1e4,
            tau: 1.0,
            d_c: 1e9,
        };
        let d = drift(0.0, &ExtendedState::new(2.0 * PI * 1e4, 0.0, n / 2.0), &p, &ou).unwrap();
        assert_eq!(d[0], 0.0);

        let x = ExtendedState::new(2.0 * PI * 1e4, 1e10, 2e11);
        let d = drift(0.0, &x, &p, &constant(x.omega)).unwrap();
        let t2 = 0.87e-3;
        let ac = nalgebra::Matrix2::new(-1.0 / t2, x.omega, -x.omega, -1.0 / t2);
        let lin = ac * Vector2::new(x.j_y, x.j_z);
        assert_relative_eq!(d[1], lin[0], max_relative = 1e-14);
        assert_relative_eq!(d[2], lin[1], max_relative = 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = table();
        let ou = SignalModel::Ou {
            omega_bar: 6e4,
            tau: 1e-3,
            d_c: 1e9,
        };
        let m = SdeModel::new(&p, &ou).unwrap();
        let x = Vector3::new(6.2e4, 3e10, -1.7e11);
        let jac = m.jacobian(&x);
        for c in 0..3 {
            let step = 1e-6 * (1.0 + x[c].abs());
            let mut xp = x;
            let mut xm = x;
            xp[c] += step;
            xm[c] -= step;
            let fd = (m.drift(&xp) - m.drift(&xm)) / (2.0 * step);
            for r in 0..3 {
                let scale = jac[(r, c)].abs().max(1e-300);
                let err = (fd[r] - jac[(r, c)]).abs();
                assert!(err <= 1e-6 * scale || err < 1e-9, "({r},{c}) {} vs {}", fd[r], jac[(r, c)]);
            }
        }
        let j0 = m.jacobian(&Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(j0[(1, 0)], 0.0);
        assert_eq!(j0[(2, 0)], 0.0);
        let jc = SdeModel::new(&p, &constant(1.0)).unwrap().jacobian(&x);
        assert_eq!(jc.row(0).sum(), 0.0);
    }

    #[test]
    fn b_vector_vanishes() {
        let p = table();
        let ou = SignalModel::Ou {
            omega_bar: 6e4,
            tau: 1.0,
            d_c: 1e9,
        };
        for s in [ou, constant(3.0)] {
            assert_eq!(SdeModel::new(&p, &s).unwrap().b_vector(), Vector3::zeros());
        }
    }

    #[test]
    fn ito_taylor_fixed_point() {
        let p = SpmParams { q: 0.0, ..table() };
        let s = constant(0.0);
        let mut rng = stream(1, 0, Purpose::StateNoise);
        let x = ExtendedState::new(0.0, 0.0, 0.0);
        assert_eq!(ito_taylor_1p5_step(&x, 1e-6, &p, &s, &mut rng).unwrap(), x);
        assert_eq!(euler_maruyama_step(&x, 0.0, &p, &s, &mut rng).unwrap(), x);
    }

    #[test]
    fn increment_covariance() {
        let h = 2e-3;
        let mut rng = stream(11, 0, Purpose::StateNoise);
        let n = 1_000_000;
        let (mut sxx, mut sxz, mut szz) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z1 = normal3(&mut rng);
            let z2 = normal3(&mut rng);
            let (xi, zeta) = correlated_increments(h, &z1, &z2);
            sxx += xi[0] * xi[0];
            sxz += xi[0] * zeta[0];
            szz += zeta[0] * zeta[0];
        }
        let n = n as f64;
        assert_relative_eq!(sxx / n, h, max_relative = 0.01);
        assert_relative_eq!(sxz / n, h * h / 2.0, max_relative = 0.01);
        assert_relative_eq!(szz / n, h.powi(3) / 3.0, max_relative = 0.01);
    }

    #[test]
    fn euler_noiseless_is_explicit_euler() {
        let p = SpmParams { q: 0.0, ..table() };
        let w = 2.0 * PI * 1e4;
        let mut rng = stream(1, 0, Purpose::StateNoise);
        let x = ExtendedState::new(w, 1e9, 2e11);
        let h = 1e-7;
        let out = euler_maruyama_step(&x, h, &p, &constant(w), &mut rng).unwrap();
        let t2 = p.t2();
        let ac = nalgebra::Matrix2::new(-1.0 / t2, w, -w, -1.0 / t2);
        let j = Vector2::new(x.j_y, x.j_z);
        let expect = j + ac * j * h;
        assert_relative_eq!(out.j_y, expect[0], max_relative = 1e-14);
        assert_relative_eq!(out.j_z, expect[1], max_relative = 1e-14);
    }

    #[test]
    fn exact_step_moments() {
        let p = table();
        let mut rng = stream(5, 0, Purpose::StateNoise);
        let j = Vector2::new(1e9, 2e11);
        let (w, h) = (2.0 * PI * 1e4, 5e-6);
        assert_eq!(exact_linear_step(&j, w, 0.0, &p, &mut rng).unwrap(), j);
        let pq = SpmParams { q: 0.0, ..table() };
        let d = exact_linear_step(&j, 0.0, h, &pq, &mut rng).unwrap();
        assert_relative_eq!(d, j * (-h / p.t2()).exp(), max_relative = 1e-15);

        let a = discrete_spin_transition(w, h, p.t2());
        let b = discrete_spin_noise_std(p.q, p.n, h, p.t2());
        let mean = a * j;
        let n = 100_000;
        let mut s1 = Vector2::zeros();
        let mut s2 = nalgebra::Matrix2::zeros();
        for _ in 0..n {
            let r = exact_linear_step(&j, w, h, &p, &mut rng).unwrap() - mean;
            s1 += r;
            s2 += r * r.transpose();
        }
        let n = n as f64;
        assert!((s1 / n).amax() < 0.02 * b);
        assert_relative_eq!(s2[(0, 0)] / n, b * b, max_relative = 0.02);
        assert_relative_eq!(s2[(1, 1)] / n, b * b, max_relative = 0.02);
        assert!((s2[(0, 1)] / n).abs() < 0.02 * b * b);
    }

    #[test]
    fn noiseless_record_matches_closed_form() {
        let p = SpmParams {
            q: 0.0,
            r: 0.0,
            ..table()
        };
        let w = 2.0 * PI * 1e4;
        let (traj, rec) = simulate(&p, &constant(w), 5e-3, 5, 3).unwrap();
        assert_eq!(rec.len(), 1000);
        for (i, y) in rec.outcomes.iter().enumerate() {
            let t = rec.time(i);
            let e = 0.5 * p.n * (-t / p.t2()).exp();
            assert_relative_eq!(y / p.g_d, e * (w * t).cos(), epsilon = 1e-9 * 0.5 * p.n);
            let x = traj.states[i + 1];
            assert_relative_eq!(x.j_y, e * (w * t).sin(), epsilon = 1e-8 * 0.5 * p.n);
            assert_relative_eq!(x.j_z, e * (w * t).cos(), epsilon = 1e-8 * 0.5 * p.n);
        }
    }

    #[test]
    fn measurement_noise_moments() {
        let p = SpmParams { q: 0.0, ..table() };
        let w = 2.0 * PI * 1e4;
        let (traj, rec) = simulate(&p, &constant(w), 0.5, 1, 9).unwrap();
        assert_eq!(rec.len(), 100_000);
        let res: Vec<f64> = rec
            .outcomes
            .iter()
            .zip(&traj.states[1..])
            .map(|(y, x)| y - p.g_d * x.j_z)
            .collect();
        let var = crate::stats::variance(&res);
        assert_relative_eq!(var, p.r / p.delta, max_relative = 0.02);
    }

    #[test]
    fn single_sample_and_determinism() {
        let p = table();
        let (_, rec) = simulate(&p, &constant(6e4), p.delta, 1, 0).unwrap();
        assert_eq!(rec.len(), 1);
        let ou = SignalModel::Ou {
            omega_bar: 6e4,
            tau: 1.0,
            d_c: 1e9,
        };
        let a = simulate(&p, &ou, 1e-3, 5, 42).unwrap();
        let b = simulate(&p, &ou, 1e-3, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&p, &ou, 1e-3, 5, 43).unwrap();
        assert_ne!(a.1, c.1);
        assert!(simulate(&p, &ou, 0.5 * p.delta, 1, 0).is_err());
        assert!(simulate(&p, &ou, 1e-3, 0, 0).is_err());
    }

    #[test]
    fn steady_state_spin_variance() {
        // Start from rest, wait 10 T₂, then sample every 2 T₂.
        let p = table();
        let t2 = p.t2();
        let opts = SimOptions {
            substeps: 1,
            spin0: Some(Vector2::zeros()),
            ..SimOptions::default()
        };
        let mut var_y = 0.0;
        let mut var_z = 0.0;
        let mut count = 0.0;
        let stride = (2.0 * t2 / p.delta) as usize;
        let burn = (10.0 * t2 / p.delta) as usize;
        for run in 0..20 {
            let mut streams = RunStreams::new(17, run);
            let (traj, _) = simulate_with(&p, &constant(6e4), 1.0, &opts, &mut streams).unwrap();
            for x in traj.states[burn..].iter().step_by(stride) {
                var_y += x.j_y * x.j_y;
                var_z += x.j_z * x.j_z;
                count += 1.0;
            }
        }
        let target = 0.5 * p.q * p.n;
        assert!(count > 5000.0);
        // Effective sample count here is ~1e4, giving ~1.5% standard error.
        assert_relative_eq!(var_y / count, target, max_relative = 0.05);
        assert_relative_eq!(var_z / count, target, max_relative = 0.05);
    }

    #[test]
    fn record_csv_round_trip() {
        let rec = MeasurementRecord {
            delta: 5e-6,
            outcomes: vec![1.5, -2.25e5, 3.0],
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y\n5.00000000e-6,1.5\n"));
        let back = MeasurementRecord::read_csv(&buf[..]).unwrap();
        assert_eq!(back, rec);
    }
}
