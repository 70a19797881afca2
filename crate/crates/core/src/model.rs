//! Parametric diffusion models.
//!
//! A model describes the observed process
//!
//! ```text
//! dY_t = b_t dt + sigma(X_t, theta) dw_t
//! ```
//!
//! together with a box-shaped parameter domain. Only the diffusion
//! coefficient enters the quasi-likelihood; the drift is used for simulation
//! and is otherwise a nuisance. All built-in models take `X = Y`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};

/// Dimensions of a model: parameter `p`, covariate `d`, observation `m`,
/// driving Wiener process `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub p: usize,
    pub d: usize,
    pub m: usize,
    pub r: usize,
}

/// Closed axis-aligned box standing in for the open parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(QlaError::Config("parameter box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(QlaError::Config(format!("empty parameter box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i).powi(2)).sum::<f64>().sqrt()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Margin kept between optimizer iterates and the boundary.
    pub fn margin(&self, i: usize) -> f64 {
        1e-9 * self.width(i)
    }

    pub fn contains_closed(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| *t >= *l && *t <= *h)
    }

    pub fn contains_open(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| *t > *l && *t < *h)
    }

    pub fn check_closed(&self, theta: &[f64]) -> Result<()> {
        if self.contains_closed(theta) {
            Ok(())
        } else {
            Err(QlaError::Domain { theta: theta.to_vec(), what: self.describe() })
        }
    }

    /// Clamps into `[lo + margin, hi - margin]`.
    pub fn clamp_interior(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            let mu = self.margin(i);
            *t = t.clamp(self.lo[i] + mu, self.hi[i] - mu);
        }
    }

    fn describe(&self) -> String {
        let parts: Vec<String> =
            self.lo.iter().zip(&self.hi).map(|(l, h)| format!("[{l}, {h}]")).collect();
        parts.join(" x ")
    }
}

/// Diffusion coefficient `sigma(x, theta)` with optional analytic derivatives.
///
/// Implementations must be pure: the same arguments always yield the same
/// output.
pub trait Volatility: Send + Sync + fmt::Debug {
    fn dims(&self) -> Dims;

    /// Writes `sigma(x, theta)` (an `m x r` matrix) into `out`.
    fn sigma(&self, x: &[f64], theta: &[f64], out: &mut DMatrix<f64>);

    /// Writes `d sigma / d theta_i` into `out[i]`. Returns `false` when no
    /// analytic form is available.
    fn dsigma_dtheta(&self, _x: &[f64], _theta: &[f64], _out: &mut [DMatrix<f64>]) -> bool {
        false
    }

    /// Writes `d^2 sigma / d theta_i d theta_j` into `out[i * p + j]`.
    fn d2sigma_dtheta2(&self, _x: &[f64], _theta: &[f64], _out: &mut [DMatrix<f64>]) -> bool {
        false
    }

    /// Scalar `d sigma / d x` for one-dimensional models (Milstein correction).
    fn dsigma_dx(&self, _x: f64, _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Fast representation for scalar models with log-linear variance.
    fn log_linear(&self) -> Option<&dyn LogLinearVariance> {
        None
    }
}

/// Scalar models whose log-variance separates as
/// `log S(x, theta) = sum_j a_j(theta) phi_j(x)`.
///
/// Used to evaluate the quasi-likelihood on large parameter grids with a
/// single pass of feature evaluation per path.
pub trait LogLinearVariance: Send + Sync {
    fn n_features(&self) -> usize;
    fn features(&self, x: f64, out: &mut [f64]);
    fn coefficients(&self, theta: &[f64], out: &mut [f64]);
}

/// Drift of the observed process; nuisance for estimation.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `b = coef * y`, componentwise.
    Linear { coef: f64 },
    Custom(Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>),
}

impl Drift {
    pub fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Drift::Linear { coef } => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = coef * v;
                }
            }
            Drift::Custom(f) => f(t, y, out),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Linear { coef } => write!(f, "Linear {{ coef: {coef} }}"),
            Drift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// A parametric diffusion model. Immutable once built and cheap to clone.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dims: Dims,
    pub theta_domain: ThetaBox,
    pub drift: Drift,
    /// Initial state `Y_0 = X_0`.
    pub y0: Vec<f64>,
    vol: Arc<dyn Volatility>,
}

/// Which parameter derivatives of `S` to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    First,
    Second,
}

/// Cholesky factor, log-determinant and inverse of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SFactor {
    pub chol: DMatrix<f64>,
    pub log_det: f64,
    pub inv: DMatrix<f64>,
}

impl SFactor {
    pub fn from_matrix(s: DMatrix<f64>) -> Result<Self> {
        let chol = s.cholesky().ok_or(QlaError::NonSpd { step: None })?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        Ok(Self { chol: l, log_det, inv: symmetrize(inv) })
    }

    /// `S^{-1}[v v^T]` via forward substitution against the factor.
    pub fn inv_quad(&self, v: &[f64]) -> f64 {
        let b = DVector::from_column_slice(v);
        let z = self.chol.solve_lower_triangular(&b).expect("factor has a positive diagonal");
        z.norm_squared()
    }
}

/// `S` and its parameter derivatives at one point.
#[derive(Debug, Clone)]
pub struct SDerivatives {
    pub s: DMatrix<f64>,
    /// `d S / d theta_i`, length `p`.
    pub first: Vec<DMatrix<f64>>,
    /// `d^2 S / d theta_i d theta_j` stored at `i * p + j`; empty for first order.
    pub second: Vec<DMatrix<f64>>,
}

pub(crate) fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        theta_domain: ThetaBox,
        drift: Drift,
        y0: Vec<f64>,
        vol: Arc<dyn Volatility>,
    ) -> Result<Self> {
        let dims = vol.dims();
        if dims.p == 0 || dims.m == 0 || dims.r == 0 {
            return Err(QlaError::Config("model dimensions must be positive".into()));
        }
        if theta_domain.dim() != dims.p {
            return Err(QlaError::Config(format!(
                "parameter box has dimension {} but the model has p = {}",
                theta_domain.dim(),
                dims.p
            )));
        }
        if y0.len() != dims.m {
            return Err(QlaError::Config(format!("initial state must have length m = {}", dims.m)));
        }
        Ok(Self { name: name.into(), dims, theta_domain, drift, y0, vol })
    }

    pub fn volatility(&self) -> &dyn Volatility {
        self.vol.as_ref()
    }

    /// Same model with analytic derivatives hidden, forcing finite differences.
    pub fn without_analytic_derivatives(&self) -> Self {
        let mut out = self.clone();
        out.vol = Arc::new(NumericOnly(self.vol.clone()));
        out.name = format!("{}-numeric", self.name);
        out
    }

    pub fn p(&self) -> usize {
        self.dims.p
    }

    pub fn m(&self) -> usize {
        self.dims.m
    }

    pub(crate) fn sigma_buffer(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.dims.m, self.dims.r)
    }

    /// Scalar `S` for `m = 1` models, reusing a `1 x r` buffer.
    #[inline]
    pub(crate) fn scalar_s(&self, x: &[f64], theta: &[f64], buf: &mut DMatrix<f64>) -> f64 {
        self.vol.sigma(x, theta, buf);
        buf.iter().map(|v| v * v).sum()
    }

    fn raw_s(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let mut sig = self.sigma_buffer();
        self.vol.sigma(x, theta, &mut sig);
        symmetrize(&sig * sig.transpose())
    }

    /// `S(x, theta) = sigma sigma^T`, symmetrized.
    pub fn s_matrix(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.theta_domain.check_closed(theta)?;
        let s = self.raw_s(x, theta);
        if s.clone().cholesky().is_none() {
            return Err(QlaError::NonSpd { step: None });
        }
        Ok(s)
    }

    pub fn s_chol_logdet_inv(&self, x: &[f64], theta: &[f64]) -> Result<SFactor> {
        self.theta_domain.check_closed(theta)?;
        SFactor::from_matrix(self.raw_s(x, theta))
    }

    /// Parameter derivatives of `S`. Analytic when the volatility supplies
    /// `d sigma / d theta`, otherwise central differences.
    pub fn dtheta_s(&self, x: &[f64], theta: &[f64], order: DerivOrder) -> Result<SDerivatives> {
        self.theta_domain.check_closed(theta)?;
        let p = self.dims.p;
        let mut sig = self.sigma_buffer();
        self.vol.sigma(x, theta, &mut sig);
        let s = symmetrize(&sig * sig.transpose());

        let mut dsig = vec![self.sigma_buffer(); p];
        let analytic_first = self.vol.dsigma_dtheta(x, theta, &mut dsig);
        let mut d2sig = Vec::new();
        let analytic_second = order == DerivOrder::Second && {
            d2sig = vec![self.sigma_buffer(); p * p];
            self.vol.d2sigma_dtheta2(x, theta, &mut d2sig)
        };

        let first = if analytic_first {
            dsig.iter()
                .map(|ds| {
                    let a = ds * sig.transpose();
                    let t = a.transpose();
                    a + t
                })
                .collect()
        } else {
            self.fd_first(x, theta)?
        };

        let second = match order {
            DerivOrder::First => Vec::new(),
            DerivOrder::Second if analytic_first && analytic_second => {
                let mut out = Vec::with_capacity(p * p);
                for i in 0..p {
                    for j in 0..p {
                        let a = &d2sig[i * p + j] * sig.transpose();
                        let b = &dsig[i] * dsig[j].transpose();
                        let full = &a + a.transpose() + &b + b.transpose();
                        out.push(symmetrize(full));
                    }
                }
                out
            }
            DerivOrder::Second => self.fd_second(x, theta)?,
        };
        Ok(SDerivatives { s, first, second })
    }

    fn fd_step(theta_i: f64, order: DerivOrder) -> f64 {
        let scale = theta_i.abs().max(1.0);
        match order {
            DerivOrder::First => f64::EPSILON.cbrt() * scale,
            DerivOrder::Second => f64::EPSILON.powf(0.25) * scale,
        }
    }

    fn check_fd(&self, theta: &[f64], i: usize, h: f64) -> Result<()> {
        let b = &self.theta_domain;
        if theta[i] - h < b.lo()[i] || theta[i] + h > b.hi()[i] {
            return Err(QlaError::Domain {
                theta: theta.to_vec(),
                what: format!("interior (finite-difference step {h:e} leaves the box)"),
            });
        }
        Ok(())
    }

    fn fd_first(&self, x: &[f64], theta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(self.dims.p);
        let mut th = theta.to_vec();
        for i in 0..self.dims.p {
            let h = Self::fd_step(theta[i], DerivOrder::First);
            self.check_fd(theta, i, h)?;
            th[i] = theta[i] + h;
            let sp = self.raw_s(x, &th);
            th[i] = theta[i] - h;
            let sm = self.raw_s(x, &th);
            th[i] = theta[i];
            out.push((sp - sm) / (2.0 * h));
        }
        Ok(out)
    }

    fn fd_second(&self, x: &[f64], theta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let p = self.dims.p;
        let s0 = self.raw_s(x, theta);
        let mut out = vec![DMatrix::zeros(self.dims.m, self.dims.m); p * p];
        let mut th = theta.to_vec();
        let steps: Vec<f64> = theta.iter().map(|t| Self::fd_step(*t, DerivOrder::Second)).collect();
        for (i, h) in steps.iter().enumerate() {
            self.check_fd(theta, i, *h)?;
        }
        for i in 0..p {
            let hi = steps[i];
            th[i] = theta[i] + hi;
            let sp = self.raw_s(x, &th);
            th[i] = theta[i] - hi;
            let sm = self.raw_s(x, &th);
            th[i] = theta[i];
            out[i * p + i] = (sp - &s0 * 2.0 + sm) / (hi * hi);
            for j in (i + 1)..p {
                let hj = steps[j];
                let mut eval = |a: f64, b: f64| {
                    th[i] = theta[i] + a * hi;
                    th[j] = theta[j] + b * hj;
                    let s = self.raw_s(x, &th);
                    th[i] = theta[i];
                    th[j] = theta[j];
                    s
                };
                let d = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * hi * hj);
                out[i * p + j] = d.clone();
                out[j * p + i] = d;
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
struct NumericOnly(Arc<dyn Volatility>);

impl Volatility for NumericOnly {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn sigma(&self, x: &[f64], theta: &[f64], out: &mut DMatrix<f64>) {
        self.0.sigma(x, theta, out)
    }
    fn dsigma_dx(&self, x: f64, theta: &[f64]) -> Option<f64> {
        self.0.dsigma_dx(x, theta)
    }
}

// ---------------------------------------------------------------------------
// Functional forms
// ---------------------------------------------------------------------------

/// Built-in functional forms for the diffusion coefficient. The scale `a`
/// multiplies sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Form {
    /// `sigma = a exp(b theta sin^2 x)`
    ExpSin2 { a: f64, b: f64 },
    /// `sigma = a exp(sin(theta) sin(x) - theta^2 sin^2(x))`
    SinSin { a: f64 },
    /// `sigma = a (1 + x^2)^theta`
    Power { a: f64 },
    /// `sigma = a exp(c theta)`, independent of `x`.
    ExpLinear { a: f64, c: f64 },
    /// `sigma = value`, independent of the parameter.
    Constant { value: f64 },
    /// Two-dimensional lower-triangular
    /// `[[exp(theta_1 (1 + sin^2 x_1)), 0], [rho, exp(theta_2 (1 + sin^2 x_2))]]`.
    CoupledExp2 { rho: f64 },
}

impl Form {
    pub fn dims(&self) -> Dims {
        match self {
            Form::CoupledExp2 { .. } => Dims { p: 2, d: 2, m: 2, r: 2 },
            _ => Dims { p: 1, d: 1, m: 1, r: 1 },
        }
    }
}

impl Volatility for Form {
    fn dims(&self) -> Dims {
        Form::dims(self)
    }

    #[inline]
    fn sigma(&self, x: &[f64], theta: &[f64], out: &mut DMatrix<f64>) {
        match *self {
            Form::ExpSin2 { a, b } => {
                let s = x[0].sin();
                out[(0, 0)] = a * (b * theta[0] * s * s).exp();
            }
            Form::SinSin { a } => {
                let s = x[0].sin();
                let t = theta[0];
                out[(0, 0)] = a * (t.sin() * s - t * t * s * s).exp();
            }
            Form::Power { a } => out[(0, 0)] = a * (1.0 + x[0] * x[0]).powf(theta[0]),
            Form::ExpLinear { a, c } => out[(0, 0)] = a * (c * theta[0]).exp(),
            Form::Constant { value } => out[(0, 0)] = value,
            Form::CoupledExp2 { rho } => {
                let (s1, s2) = (x[0].sin(), x[1].sin());
                out[(0, 0)] = (theta[0] * (1.0 + s1 * s1)).exp();
                out[(0, 1)] = 0.0;
                out[(1, 0)] = rho;
                out[(1, 1)] = (theta[1] * (1.0 + s2 * s2)).exp();
            }
        }
    }

    fn dsigma_dtheta(&self, x: &[f64], theta: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let mut sig = DMatrix::zeros(out[0].nrows(), out[0].ncols());
        self.sigma(x, theta, &mut sig);
        match *self {
            Form::CoupledExp2 { .. } => {
                let (s1, s2) = (x[0].sin(), x[1].sin());
                out[0].fill(0.0);
                out[1].fill(0.0);
                out[0][(0, 0)] = (1.0 + s1 * s1) * sig[(0, 0)];
                out[1][(1, 1)] = (1.0 + s2 * s2) * sig[(1, 1)];
            }
            _ => out[0][(0, 0)] = self.dlog_sigma(x[0], theta[0]).0 * sig[(0, 0)],
        }
        true
    }

    fn d2sigma_dtheta2(&self, x: &[f64], theta: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let mut sig = DMatrix::zeros(out[0].nrows(), out[0].ncols());
        self.sigma(x, theta, &mut sig);
        match *self {
            Form::CoupledExp2 { .. } => {
                let (s1, s2) = (x[0].sin(), x[1].sin());
                out.iter_mut().for_each(|o| o.fill(0.0));
                out[0][(0, 0)] = (1.0 + s1 * s1).powi(2) * sig[(0, 0)];
                out[3][(1, 1)] = (1.0 + s2 * s2).powi(2) * sig[(1, 1)];
            }
            _ => {
                let (g1, g2) = self.dlog_sigma(x[0], theta[0]);
                out[0][(0, 0)] = (g2 + g1 * g1) * sig[(0, 0)];
            }
        }
        true
    }

    fn dsigma_dx(&self, x: f64, theta: &[f64]) -> Option<f64> {
        let t = theta[0];
        let mut sig = DMatrix::zeros(1, 1);
        match *self {
            Form::CoupledExp2 { .. } => return None,
            _ => self.sigma(&[x], theta, &mut sig),
        }
        let s = sig[(0, 0)];
        let dlog = match *self {
            Form::ExpSin2 { b, .. } => b * t * (2.0 * x).sin(),
            Form::SinSin { .. } => t.sin() * x.cos() - t * t * (2.0 * x).sin(),
            Form::Power { .. } => t * 2.0 * x / (1.0 + x * x),
            Form::ExpLinear { .. } | Form::Constant { .. } => 0.0,
            Form::CoupledExp2 { .. } => unreachable!(),
        };
        Some(s * dlog)
    }

    fn log_linear(&self) -> Option<&dyn LogLinearVariance> {
        match self {
            Form::CoupledExp2 { .. } => None,
            _ => Some(self),
        }
    }
}

impl Form {
    /// First and second theta-derivatives of `log sigma` for scalar forms.
    fn dlog_sigma(&self, x: f64, t: f64) -> (f64, f64) {
        match *self {
            Form::ExpSin2 { b, .. } => {
                let s2 = x.sin().powi(2);
                (b * s2, 0.0)
            }
            Form::SinSin { .. } => {
                let s = x.sin();
                (t.cos() * s - 2.0 * t * s * s, -t.sin() * s - 2.0 * s * s)
            }
            Form::Power { .. } => ((1.0 + x * x).ln(), 0.0),
            Form::ExpLinear { c, .. } => (c, 0.0),
            Form::Constant { .. } => (0.0, 0.0),
            Form::CoupledExp2 { .. } => unreachable!("vector form"),
        }
    }
}

impl LogLinearVariance for Form {
    fn n_features(&self) -> usize {
        match self {
            Form::SinSin { .. } => 3,
            Form::ExpSin2 { .. } | Form::Power { .. } => 2,
            _ => 1,
        }
    }

    #[inline]
    fn features(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        match self {
            Form::ExpSin2 { .. } => out[1] = x.sin().powi(2),
            Form::SinSin { .. } => {
                let s = x.sin();
                out[1] = s;
                out[2] = s * s;
            }
            Form::Power { .. } => out[1] = (1.0 + x * x).ln(),
            _ => {}
        }
    }

    #[inline]
    fn coefficients(&self, theta: &[f64], out: &mut [f64]) {
        let t = theta[0];
        match *self {
            Form::ExpSin2 { a, b } => {
                out[0] = 2.0 * a.ln();
                out[1] = 2.0 * b * t;
            }
            Form::SinSin { a } => {
                out[0] = 2.0 * a.ln();
                out[1] = 2.0 * t.sin();
                out[2] = -2.0 * t * t;
            }
            Form::Power { a } => {
                out[0] = 2.0 * a.ln();
                out[1] = 2.0 * t;
            }
            Form::ExpLinear { a, c } => out[0] = 2.0 * (a.ln() + c * t),
            Form::Constant { value } => out[0] = 2.0 * value.abs().ln(),
            Form::CoupledExp2 { .. } => unreachable!("vector form"),
        }
    }
}

// ---------------------------------------------------------------------------
// Registry and configuration
// ---------------------------------------------------------------------------

/// Drift as it appears in configuration documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftConfig {
    Zero,
    Linear { coef: f64 },
}

impl From<DriftConfig> for Drift {
    fn from(d: DriftConfig) -> Self {
        match d {
            DriftConfig::Zero => Drift::Zero,
            DriftConfig::Linear { coef } => Drift::Linear { coef },
        }
    }
}

/// A user model: a built-in functional form with user coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(flatten)]
    pub form: Form,
    /// One `[lo, hi]` pair per parameter.
    pub theta_domain: Vec<[f64; 2]>,
    #[serde(default = "default_drift")]
    pub drift: DriftConfig,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub analytic_derivatives: bool,
}

fn default_drift() -> DriftConfig {
    DriftConfig::Zero
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let dims = self.form.dims();
        let lo = self.theta_domain.iter().map(|b| b[0]).collect();
        let hi = self.theta_domain.iter().map(|b| b[1]).collect();
        let y0 = self.y0.clone().unwrap_or_else(|| vec![0.0; dims.m]);
        let model = ModelSpec::new(
            self.name.clone(),
            ThetaBox::new(lo, hi)?,
            self.drift.into(),
            y0,
            Arc::new(self.form),
        )?;
        Ok(if self.analytic_derivatives { model } else { model.without_analytic_derivatives() })
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["exp-sin2", "sin-sin", "power"];

/// Looks up one of the built-in models:
///
/// * `exp-sin2`: `dY = Y dt + exp(theta sin^2 Y) dw`, `Y_0 = 0`, `theta in (-pi, pi)`
/// * `sin-sin`: `dY = Y dt + exp(sin(theta) sin(Y) - theta^2 sin^2(Y)) dw`, `Y_0 = 0`, `theta in (-pi, pi)`
/// * `power`: `dX = (1 + X^2)^theta dw`, `X_0 = 0`, `theta in (0, 1/2)`
pub fn builtin(name: &str) -> Result<ModelSpec> {
    use std::f64::consts::PI;
    let (form, lo, hi, drift) = match name {
        "exp-sin2" => (Form::ExpSin2 { a: 1.0, b: 1.0 }, -PI, PI, Drift::Linear { coef: 1.0 }),
        "sin-sin" => (Form::SinSin { a: 1.0 }, -PI, PI, Drift::Linear { coef: 1.0 }),
        "power" => (Form::Power { a: 1.0 }, 0.0, 0.5, Drift::Zero),
        other => {
            return Err(QlaError::Config(format!(
                "unknown model '{other}' (built-ins: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    ModelSpec::new(name, ThetaBox::interval(lo, hi)?, drift, vec![0.0], Arc::new(form))
}

/// Resolves a model by name, consulting user definitions first.
pub fn resolve(name: &str, custom: &[ModelConfig]) -> Result<ModelSpec> {
    match custom.iter().find(|c| c.name == name) {
        Some(c) => c.build(),
        None => builtin(name),
    }
}
