//! Extended and cubature Kalman filters over `x = [ω, J_y, J_z]`.
//!
//! Prediction uses the exact discretisation of the spin dynamics with ω
//! frozen over one sampling period; the signal follows the exact OU or
//! Wiener transition. Correction is the usual scalar Kalman update with
//! `H = [0, 0, g_D]`. [`Filter`] runs the same recursion on a square-root
//! factor of P, which stays valid when g²P₃₃ dwarfs R/Δ.

use std::io::Write;

use nalgebra::{Const, DimMin, Matrix3, Matrix4, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    coherence_time, discrete_spin_noise_std, discrete_spin_transition, measurement_noise_variance,
    signal_discrete_params, GaussianPrior, SignalDiscrete, SignalModel, SpmParams,
};
use crate::sde_sim::MeasurementRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn from_prior(prior: &GaussianPrior<3>) -> Self {
        Self::new(prior.mean, prior.cov)
    }

    fn symmetrized(mut self) -> Self {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
        self
    }

    fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ckf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Ckf => "ckf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// The filter's internal model of ω: OU or Wiener.
    pub assumed: SignalModel,
    pub prior: GaussianPrior<3>,
    pub params: SpmParams,
}

/// Per-step constants derived from a [`FilterConfig`].
#[derive(Debug, Clone, Copy)]
pub struct FilterModel {
    pub kind: FilterKind,
    pub delta: f64,
    pub decay: f64,
    pub signal: SignalDiscrete,
    /// Diagonal of D = diag(d1, d2, d2).
    pub d: Vector3<f64>,
    pub r_meas: f64,
    pub g_d: f64,
    pub t2: f64,
}

impl FilterModel {
    pub fn new(cfg: &FilterConfig) -> Result<Self> {
        let p = &cfg.params;
        p.validate()?;
        cfg.assumed.validate()?;
        let t2 = coherence_time(p)?;
        let signal = signal_discrete_params(&cfg.assumed, p.delta).map_err(|_| Error::UnsupportedSignal {
            context: "filter assumed model",
            variant: cfg.assumed.name(),
        })?;
        let b = discrete_spin_noise_std(p.q, p.n, p.delta, t2);
        Ok(Self {
            kind: cfg.kind,
            delta: p.delta,
            decay: (-p.delta / t2).exp(),
            signal,
            d: Vector3::new(signal.d1, b * b, b * b),
            r_meas: measurement_noise_variance(p),
            g_d: p.g_d,
            t2,
        })
    }
}

/// One-period mean map f(m).
pub fn discrete_f(m: &Vector3<f64>, fm: &FilterModel) -> Vector3<f64> {
    let (s, c) = (m[0] * fm.delta).sin_cos();
    Vector3::new(
        fm.signal.phi * m[0] + fm.signal.offset,
        fm.decay * (m[1] * c + m[2] * s),
        fm.decay * (-m[1] * s + m[2] * c),
    )
}

pub fn discrete_f_jacobian(m: &Vector3<f64>, fm: &FilterModel) -> Matrix3<f64> {
    let f = discrete_f(m, fm);
    let a = discrete_spin_transition(m[0], fm.delta, fm.t2);
    Matrix3::new(
        fm.signal.phi, 0.0, 0.0,
        fm.delta * f[2], a[(0, 0)], a[(0, 1)],
        -fm.delta * f[1], a[(1, 0)], a[(1, 1)],
    )
}

pub fn ekf_predict(b: &GaussianBelief, fm: &FilterModel) -> Result<GaussianBelief> {
    let f = discrete_f_jacobian(&b.mean, fm);
    let cov = f * b.cov * f.transpose() + Matrix3::from_diagonal(&fm.d);
    GaussianBelief::new(discrete_f(&b.mean, fm), cov)
        .symmetrized()
        .ensure_finite("EKF prediction")
}

/// Lower Cholesky factor of a positive semidefinite 3×3 matrix. Pivots that
/// vanish to roundoff give a zero column; clearly negative ones fail.
fn psd_cholesky(p: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let tol = 1e-13 * p[(j, j)].abs();
        let mut d = p[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..3 {
                let mut v = p[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        } else if d >= -tol {
            for i in j + 1..3 {
                let mut v = p[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                // Off-diagonal mass on a null pivot means P is indefinite.
                if v.abs() > 1e-7 * (p[(i, i)] * p[(j, j)]).abs().sqrt() {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// √P with jitter escalation: on failure add ε·diag(P), ε = 1e-12 … 1e-6.
pub fn cholesky_with_jitter(p: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if let Some(l) = psd_cholesky(p) {
        return Ok(l);
    }
    let diag = Matrix3::from_diagonal(&p.diagonal().map(f64::abs));
    let mut eps = 1e-12;
    while eps <= 1e-6 * (1.0 + 1e-9) {
        if let Some(l) = psd_cholesky(&(p + diag * eps)) {
            return Ok(l);
        }
        eps *= 10.0;
    }
    Err(Error::Cholesky { eps: eps / 10.0 })
}

/// Unit cubature directions ±√3·eᵢ.
pub fn cubature_points() -> [Vector3<f64>; 6] {
    let r = 3f64.sqrt();
    let e = |i: usize, s: f64| {
        let mut v = Vector3::zeros();
        v[i] = s * r;
        v
    };
    [e(0, 1.0), e(1, 1.0), e(2, 1.0), e(0, -1.0), e(1, -1.0), e(2, -1.0)]
}

pub fn ckf_predict(b: &GaussianBelief, fm: &FilterModel) -> Result<GaussianBelief> {
    let sqrt_p = cholesky_with_jitter(&b.cov)?;
    let pts: Vec<Vector3<f64>> = cubature_points()
        .iter()
        .map(|xi| discrete_f(&(b.mean + sqrt_p * xi), fm))
        .collect();
    let mean = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / 6.0;
    let mut cov = Matrix3::from_diagonal(&fm.d);
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose() / 6.0;
    }
    GaussianBelief::new(mean, cov)
        .symmetrized()
        .ensure_finite("CKF prediction")
}

/// Scalar Bayes update. Returns the posterior, the innovation y − H·m⁻ and S.
pub fn kalman_correct(b_minus: &GaussianBelief, y: f64, fm: &FilterModel) -> Result<(GaussianBelief, f64, f64)> {
    let g = fm.g_d;
    let s = fm.r_meas + g * g * b_minus.cov[(2, 2)];
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate { step: 0, s });
    }
    let innovation = y - g * b_minus.mean[2];
    let k: Vector3<f64> = b_minus.cov.column(2) * (g / s);
    // Joseph form of P⁻ − K·S·Kᵀ; equal in exact arithmetic, but it keeps
    // the cross terms accurate when R/Δ ≪ g²P₃₃.
    let mut i_kh = Matrix3::identity();
    i_kh.set_column(2, &(Vector3::z() - k * g));
    let post = GaussianBelief::new(
        b_minus.mean + k * innovation,
        i_kh * b_minus.cov * i_kh.transpose() + k * k.transpose() * fm.r_meas,
    )
    .symmetrized()
    .ensure_finite("Kalman correction")?;
    Ok((post, innovation, s))
}

/// Belief carried as a mean and a lower-triangular factor L with P = L·Lᵀ.
///
/// The recursive filter propagates this form: P stays positive semidefinite
/// by construction, where the covariance form loses it to cancellation once
/// g²P₃₃ exceeds R/Δ by many orders of magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtBelief {
    pub mean: Vector3<f64>,
    pub chol: Matrix3<f64>,
}

impl SqrtBelief {
    pub fn from_belief(b: &GaussianBelief) -> Result<Self> {
        Ok(Self {
            mean: b.mean,
            chol: cholesky_with_jitter(&b.cov)?,
        })
    }

    pub fn to_belief(&self) -> GaussianBelief {
        GaussianBelief::new(self.mean, self.chol * self.chol.transpose()).symmetrized()
    }

    fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.mean.iter().chain(self.chol.iter()).all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Lower factor of A·Aᵀ given Aᵀ (rows × 3), via QR.
fn lower_factor<const R: usize>(a_t: SMatrix<f64, R, 3>) -> Matrix3<f64>
where
    Const<R>: DimMin<Const<3>, Output = Const<3>>,
{
    a_t.qr().r().transpose()
}

pub fn sqrt_ekf_predict(b: &SqrtBelief, fm: &FilterModel) -> Result<SqrtBelief> {
    let f = discrete_f_jacobian(&b.mean, fm);
    let mut pre = SMatrix::<f64, 6, 3>::zeros();
    pre.fixed_view_mut::<3, 3>(0, 0).copy_from(&(f * b.chol).transpose());
    pre.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&Matrix3::from_diagonal(&fm.d.map(f64::sqrt)));
    SqrtBelief {
        mean: discrete_f(&b.mean, fm),
        chol: lower_factor(pre),
    }
    .ensure_finite("EKF prediction")
}

pub fn sqrt_ckf_predict(b: &SqrtBelief, fm: &FilterModel) -> Result<SqrtBelief> {
    let pts = cubature_points().map(|xi| discrete_f(&(b.mean + b.chol * xi), fm));
    let mean = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / 6.0;
    let w = 6f64.sqrt().recip();
    let mut pre = SMatrix::<f64, 9, 3>::zeros();
    for (i, p) in pts.iter().enumerate() {
        pre.set_row(i, &((p - mean) * w).transpose());
    }
    pre.fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&Matrix3::from_diagonal(&fm.d.map(f64::sqrt)));
    SqrtBelief {
        mean,
        chol: lower_factor(pre),
    }
    .ensure_finite("CKF prediction")
}

/// Square-root form of [`kalman_correct`]. The pre-array
/// [[√R, g·L₃], [0, L]] is triangularised; the result holds √S, K·√S and
/// the posterior factor.
pub fn sqrt_kalman_correct(b_minus: &SqrtBelief, y: f64, fm: &FilterModel) -> Result<(SqrtBelief, f64, f64)> {
    let g = fm.g_d;
    let mut a = Matrix4::zeros();
    a[(0, 0)] = fm.r_meas.sqrt();
    for j in 0..3 {
        a[(0, j + 1)] = g * b_minus.chol[(2, j)];
    }
    a.fixed_view_mut::<3, 3>(1, 1).copy_from(&b_minus.chol);
    let post = a.transpose().qr().r().transpose();
    let s_sqrt = post[(0, 0)];
    let s = s_sqrt * s_sqrt;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate { step: 0, s });
    }
    let innovation = y - g * b_minus.mean[2];
    let kbar: Vector3<f64> = post.fixed_view::<3, 1>(1, 0).into_owned();
    let out = SqrtBelief {
        mean: b_minus.mean + kbar * (innovation / s_sqrt),
        chol: post.fixed_view::<3, 3>(1, 1).into_owned(),
    }
    .ensure_finite("Kalman correction")?;
    Ok((out, innovation, s))
}

/// Recursive filter state.
#[derive(Debug, Clone)]
pub struct Filter {
    pub model: FilterModel,
    pub belief: SqrtBelief,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub k: usize,
    pub t: f64,
    pub predicted: GaussianBelief,
    pub corrected: GaussianBelief,
    pub innovation: f64,
    pub s: f64,
    pub nis: f64,
}

impl Filter {
    pub fn new(cfg: &FilterConfig) -> Result<Self> {
        Ok(Self {
            model: FilterModel::new(cfg)?,
            belief: SqrtBelief::from_belief(&GaussianBelief::from_prior(&cfg.prior))?,
            k: 0,
        })
    }

    pub fn predict(&self) -> Result<SqrtBelief> {
        match self.model.kind {
            FilterKind::Ekf => sqrt_ekf_predict(&self.belief, &self.model),
            FilterKind::Ckf => sqrt_ckf_predict(&self.belief, &self.model),
        }
    }

    /// Predicts across one period and corrects on `y`.
    pub fn step(&mut self, y: f64) -> Result<TraceStep> {
        let k = self.k + 1;
        let predicted = self.predict()?;
        let (corrected, innovation, s) = sqrt_kalman_correct(&predicted, y, &self.model).map_err(|e| match e {
            Error::Degenerate { s, .. } => Error::Degenerate { step: k, s },
            other => other,
        })?;
        self.belief = corrected;
        self.k = k;
        Ok(TraceStep {
            k,
            t: k as f64 * self.model.delta,
            predicted: predicted.to_belief(),
            corrected: corrected.to_belief(),
            innovation,
            s,
            nis: innovation * innovation / s,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub steps: Vec<TraceStep>,
    /// Set when the recursion stopped early; `steps` holds what came before.
    pub failure: Option<Error>,
}

impl FilterTrace {
    pub fn omega_hat(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.corrected.mean[0]).collect()
    }

    /// √P₁₁ of the corrected belief.
    pub fn sigma_omega(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.corrected.cov[(0, 0)].sqrt()).collect()
    }

    pub fn mean_nis(&self) -> f64 {
        self.steps.iter().map(|s| s.nis).sum::<f64>() / self.steps.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,t,omega_hat,sigma_omega_pred,jy_hat,jz_hat,innovation,S,nis")?;
        for s in &self.steps {
            let m = s.corrected.mean;
            writeln!(
                w,
                "{},{:.8e},{},{},{},{},{},{},{}",
                s.k,
                s.t,
                m[0],
                s.corrected.cov[(0, 0)].sqrt(),
                m[1],
                m[2],
                s.innovation,
                s.s,
                s.nis
            )?;
        }
        Ok(())
    }
}

pub fn run_filter(cfg: &FilterConfig, rec: &MeasurementRecord) -> Result<FilterTrace> {
    if rec.is_empty() {
        return Err(Error::EmptyRecord);
    }
    if (rec.delta - cfg.params.delta).abs() > 1e-9 * cfg.params.delta {
        return Err(Error::InvalidParameters(format!(
            "record Delta {} differs from configured Delta {}",
            rec.delta, cfg.params.delta
        )));
    }
    let mut filter = Filter::new(cfg)?;
    let mut steps = Vec::with_capacity(rec.len());
    for &y in &rec.outcomes {
        match filter.step(y) {
            Ok(s) => steps.push(s),
            Err(e) => return Ok(FilterTrace { steps, failure: Some(e) }),
        }
    }
    Ok(FilterTrace { steps, failure: None })
}
