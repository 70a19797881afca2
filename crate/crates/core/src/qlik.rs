//! Gaussian quasi-log-likelihood for volatility parameters and the random
//! fields built from it.
//!
//! With `h = T / n` and increments `D_k = Y_{t_k} - Y_{t_{k-1}}`,
//!
//! ```text
//! H_n(theta) = -(n m / 2) log(2 pi h)
//!              - 1/2 sum_k { log det S(X_{t_{k-1}}, theta) + h^{-1} S^{-1}(X_{t_{k-1}}, theta)[D_k D_k^T] }
//! ```
//!
//! Time integrals along the covariate path (information, limiting field,
//! divergence) are left Riemann sums on the observation grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::model::{DerivOrder, ModelSpec, SDerivatives, SFactor};
use crate::numerics::gauss_legendre;
use crate::simulate::SamplePath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Simulated { seed: u64, stream: u64 },
    Ingested { file: String },
    Constructed,
}

/// Discrete observations `(X_{t_k}, Y_{t_k})`, `k = 0..=n`, on `t_k = k h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub n: usize,
    pub horizon: f64,
    pub h: f64,
    pub d: usize,
    pub m: usize,
    /// Row-major `(n + 1) x d`.
    pub x: Vec<f64>,
    /// Row-major `(n + 1) x m`.
    pub y: Vec<f64>,
    pub provenance: Provenance,
}

impl Observations {
    pub fn new(
        horizon: f64,
        d: usize,
        m: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(QlaError::Format("dimensions must be positive".into()));
        }
        if !y.len().is_multiple_of(m) || y.len() / m < 2 {
            return Err(QlaError::Format("need at least two observation rows".into()));
        }
        let rows = y.len() / m;
        if x.len() != rows * d {
            return Err(QlaError::Format(format!("x has {} values, expected {}", x.len(), rows * d)));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(QlaError::Format("horizon must be positive".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(QlaError::Format("observations contain non-finite values".into()));
        }
        let n = rows - 1;
        Ok(Self { n, horizon, h: horizon / n as f64, d, m, x, y, provenance })
    }

    pub fn from_path(path: &SamplePath) -> Self {
        Self {
            n: path.n,
            horizon: path.horizon,
            h: path.horizon / path.n as f64,
            d: path.d,
            m: path.m,
            x: path.x.clone(),
            y: path.y.clone(),
            provenance: Provenance::Simulated { seed: path.seed, stream: path.stream },
        }
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.d..(k + 1) * self.d]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.m..(k + 1) * self.m]
    }

    /// `Y_{t_k} - Y_{t_{k-1}}` for `k >= 1`.
    pub fn dy(&self, k: usize) -> Vec<f64> {
        self.y_at(k).iter().zip(self.y_at(k - 1)).map(|(a, b)| a - b).collect()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.n as f64
    }
}

/// Value, gradient and Hessian of `H_n` at `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlikEval {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// Asymptotic information `Gamma(theta*)` along the observed covariate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaInfo {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    /// Set when the matrix is numerically singular (not an error: some
    /// models are unidentifiable along particular paths).
    pub singular: bool,
}

struct Features {
    nf: usize,
    /// `phi_j(X_{t_{k-1}})` at `k * nf + j`, `k = 0..n`.
    phi: Vec<f64>,
    /// `D_k^2 / h`.
    q: Vec<f64>,
}

/// Quasi-likelihood bound to one data set and one model.
///
/// Scalar models with a log-linear variance representation get a feature
/// cache so that each parameter evaluation costs one dot product and one
/// exponential per observation.
pub struct QuasiLikelihood<'a> {
    obs: &'a Observations,
    model: &'a ModelSpec,
    features: Option<Features>,
}

impl<'a> QuasiLikelihood<'a> {
    pub fn new(obs: &'a Observations, model: &'a ModelSpec) -> Result<Self> {
        if obs.d != model.dims.d || obs.m != model.dims.m {
            return Err(QlaError::Config(format!(
                "data has d = {}, m = {} but model '{}' expects d = {}, m = {}",
                obs.d, obs.m, model.name, model.dims.d, model.dims.m
            )));
        }
        let features = match model.volatility().log_linear() {
            Some(ll) if model.dims.m == 1 && model.dims.d == 1 => {
                let nf = ll.n_features();
                let mut phi = vec![0.0; obs.n * nf];
                let mut q = Vec::with_capacity(obs.n);
                for k in 1..=obs.n {
                    ll.features(obs.x_at(k - 1)[0], &mut phi[(k - 1) * nf..k * nf]);
                    let dy = obs.y_at(k)[0] - obs.y_at(k - 1)[0];
                    q.push(dy * dy / obs.h);
                }
                Some(Features { nf, phi, q })
            }
            _ => None,
        };
        Ok(Self { obs, model, features })
    }

    /// Same as [`QuasiLikelihood::new`] but never uses the feature cache.
    pub fn new_generic(obs: &'a Observations, model: &'a ModelSpec) -> Result<Self> {
        let mut q = Self::new(obs, model)?;
        q.features = None;
        Ok(q)
    }

    pub fn observations(&self) -> &Observations {
        self.obs
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    fn constant(&self) -> f64 {
        -0.5 * (self.obs.n * self.obs.m) as f64 * (2.0 * std::f64::consts::PI * self.obs.h).ln()
    }

    /// `H_n(theta)`; `theta` may lie on the boundary of the box.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.model.theta_domain.check_closed(theta)?;
        let n = self.obs.n;
        let mut acc = 0.0;
        if let Some(f) = &self.features {
            let ll = self.model.volatility().log_linear().expect("feature cache implies log-linear");
            let mut c = vec![0.0; f.nf];
            ll.coefficients(theta, &mut c);
            for k in 0..n {
                let phi = &f.phi[k * f.nf..(k + 1) * f.nf];
                let log_s: f64 = phi.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                if !log_s.is_finite() {
                    return Err(QlaError::NonSpd { step: Some(k + 1) });
                }
                acc += log_s + f.q[k] * (-log_s).exp();
            }
        } else if self.obs.m == 1 {
            let mut buf = self.model.sigma_buffer();
            for k in 1..=n {
                let s = self.model.scalar_s(self.obs.x_at(k - 1), theta, &mut buf);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(QlaError::NonSpd { step: Some(k) });
                }
                let dy = self.obs.y_at(k)[0] - self.obs.y_at(k - 1)[0];
                acc += s.ln() + dy * dy / (self.obs.h * s);
            }
        } else {
            for k in 1..=n {
                let f = self
                    .model
                    .s_chol_logdet_inv(self.obs.x_at(k - 1), theta)
                    .map_err(|e| with_step(e, k))?;
                acc += f.log_det + f.inv_quad(&self.obs.dy(k)) / self.obs.h;
            }
        }
        Ok(self.constant() - 0.5 * acc)
    }

    /// Value, analytic gradient and Hessian via the chain rule through
    /// `d S / d theta`.
    pub fn eval(&self, theta: &[f64]) -> Result<QlikEval> {
        let p = self.model.p();
        let value = self.value(theta)?;
        let mut grad = vec![0.0; p];
        let mut hess = DMatrix::zeros(p, p);
        for k in 1..=self.obs.n {
            let der = self.model.dtheta_s(self.obs.x_at(k - 1), theta, DerivOrder::Second)?;
            let dy = self.obs.dy(k);
            if self.obs.m == 1 {
                accumulate_scalar(&der, dy[0] * dy[0] / self.obs.h, p, &mut grad, &mut hess)
                    .map_err(|e| with_step(e, k))?;
            } else {
                accumulate_matrix(&der, &dy, self.obs.h, p, &mut grad, &mut hess)
                    .map_err(|e| with_step(e, k))?;
            }
        }
        grad.iter_mut().for_each(|g| *g *= -0.5);
        hess *= -0.5;
        let hess = crate::model::symmetrize(hess);
        Ok(QlikEval { theta: theta.to_vec(), value, grad, hess })
    }

    /// `(1 / T) sum_k Q(X_{t_{k-1}}, theta, theta*) h`; equals `-2 Y(theta)`.
    pub fn mean_divergence(&self, theta: &[f64], theta_star: &[f64]) -> Result<f64> {
        self.model.theta_domain.check_closed(theta)?;
        self.model.theta_domain.check_closed(theta_star)?;
        let n = self.obs.n;
        let mut acc = 0.0;
        if let Some(f) = &self.features {
            let ll = self.model.volatility().log_linear().expect("feature cache implies log-linear");
            let (mut c, mut cs) = (vec![0.0; f.nf], vec![0.0; f.nf]);
            ll.coefficients(theta, &mut c);
            ll.coefficients(theta_star, &mut cs);
            let diff: Vec<f64> = (0..f.nf).map(|j| cs[j] - c[j]).collect();
            for k in 0..n {
                let phi = &f.phi[k * f.nf..(k + 1) * f.nf];
                let d: f64 = phi.iter().zip(&diff).map(|(a, b)| a * b).sum();
                acc += scalar_divergence_log(d);
            }
        } else {
            for k in 0..n {
                acc += crate::nondeg::q_divergence(self.model, self.obs.x_at(k), theta, theta_star)?;
            }
        }
        Ok(acc * self.obs.h / self.obs.horizon)
    }

    /// `Gamma(theta*)` as a left Riemann sum.
    pub fn gamma_info(&self, theta_star: &[f64]) -> Result<GammaInfo> {
        let p = self.model.p();
        let mut g = DMatrix::zeros(p, p);
        for k in 0..self.obs.n {
            let der = self.model.dtheta_s(self.obs.x_at(k), theta_star, DerivOrder::First)?;
            if self.obs.m == 1 {
                let s = der.s[(0, 0)];
                for i in 0..p {
                    for j in 0..p {
                        g[(i, j)] += der.first[i][(0, 0)] * der.first[j][(0, 0)] / (s * s);
                    }
                }
            } else {
                let f = SFactor::from_matrix(der.s.clone()).map_err(|e| with_step(e, k + 1))?;
                let a: Vec<DMatrix<f64>> = der.first.iter().map(|d| &f.inv * d).collect();
                for i in 0..p {
                    for j in 0..p {
                        g[(i, j)] += (&a[i] * &a[j]).trace();
                    }
                }
            }
        }
        let g = crate::model::symmetrize(g * (self.obs.h / (2.0 * self.obs.horizon)));
        let min_eigenvalue = SymmetricEigen::new(g.clone()).eigenvalues.min();
        let singular = min_eigenvalue < 1e-12;
        if singular {
            log::warn!("information matrix is singular (min eigenvalue {min_eigenvalue:e})");
        }
        Ok(GammaInfo { matrix: g, min_eigenvalue, singular })
    }
}

fn with_step(e: QlaError, k: usize) -> QlaError {
    match e {
        QlaError::NonSpd { .. } => QlaError::NonSpd { step: Some(k) },
        other => other,
    }
}

/// `e^d - 1 - d` for `d = log(S(theta*) / S(theta))`, accurate near 0.
#[inline]
pub(crate) fn scalar_divergence_log(d: f64) -> f64 {
    d.exp_m1() - d
}

fn accumulate_scalar(
    der: &SDerivatives,
    q: f64,
    p: usize,
    grad: &mut [f64],
    hess: &mut DMatrix<f64>,
) -> Result<()> {
    let s = der.s[(0, 0)];
    if !(s > 0.0) {
        return Err(QlaError::NonSpd { step: None });
    }
    let ds: Vec<f64> = der.first.iter().map(|m| m[(0, 0)]).collect();
    for i in 0..p {
        grad[i] += ds[i] / s - q * ds[i] / (s * s);
        for j in 0..p {
            let sij = der.second[i * p + j][(0, 0)];
            let dlog = sij / s - ds[i] * ds[j] / (s * s);
            let dinv = -sij / (s * s) + 2.0 * ds[i] * ds[j] / (s * s * s);
            hess[(i, j)] += dlog + q * dinv;
        }
    }
    Ok(())
}

fn accumulate_matrix(
    der: &SDerivatives,
    dy: &[f64],
    h: f64,
    p: usize,
    grad: &mut [f64],
    hess: &mut DMatrix<f64>,
) -> Result<()> {
    let f = SFactor::from_matrix(der.s.clone())?;
    let inv = &f.inv;
    let v = DVector::from_column_slice(dy);
    let quad = |m: &DMatrix<f64>| (v.transpose() * m * &v)[(0, 0)] / h;
    let a: Vec<DMatrix<f64>> = der.first.iter().map(|d| inv * d).collect();
    for i in 0..p {
        let dinv_i = -(&a[i] * inv);
        grad[i] += a[i].trace() + quad(&dinv_i);
        for j in 0..p {
            let sij = &der.second[i * p + j];
            let dlog = (inv * sij).trace() - (&a[i] * &a[j]).trace();
            let dinv = &a[j] * &a[i] * inv + &a[i] * &a[j] * inv - inv * sij * inv;
            hess[(i, j)] += dlog + quad(&dinv);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Free-function surface
// ---------------------------------------------------------------------------

pub fn h_n(obs: &Observations, model: &ModelSpec, theta: &[f64]) -> Result<f64> {
    QuasiLikelihood::new(obs, model)?.value(theta)
}

pub fn h_n_grad_hess(obs: &Observations, model: &ModelSpec, theta: &[f64]) -> Result<QlikEval> {
    QuasiLikelihood::new(obs, model)?.eval(theta)
}

fn local_theta(model: &ModelSpec, n: usize, theta_star: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != theta_star.len() {
        return Err(QlaError::Config("u and theta* must have equal length".into()));
    }
    let sq = (n as f64).sqrt();
    let theta: Vec<f64> = theta_star.iter().zip(u).map(|(t, v)| t + v / sq).collect();
    if !model.theta_domain.contains_closed(&theta) {
        return Err(QlaError::Domain { theta, what: "U_n (theta* + u / sqrt(n) must stay in the box)".into() });
    }
    Ok(theta)
}

/// `log Z_n(u) = H_n(theta* + u / sqrt(n)) - H_n(theta*)`.
pub fn log_z_field(q: &QuasiLikelihood<'_>, theta_star: &[f64], u: &[f64]) -> Result<f64> {
    if u.iter().all(|v| *v == 0.0) {
        q.model.theta_domain.check_closed(theta_star)?;
        return Ok(0.0);
    }
    let theta = local_theta(q.model, q.obs.n, theta_star, u)?;
    Ok(q.value(&theta)? - q.value(theta_star)?)
}

pub fn z_field(obs: &Observations, model: &ModelSpec, theta_star: &[f64], u: &[f64]) -> Result<f64> {
    let q = QuasiLikelihood::new(obs, model)?;
    Ok(log_z_field(&q, theta_star, u)?.exp())
}

/// `Delta_n[u] = n^{-1/2} d_theta H_n(theta*)[u]`.
pub fn delta_n(eval_at_star: &QlikEval, n: usize, u: &[f64]) -> f64 {
    eval_at_star.grad.iter().zip(u).map(|(g, v)| g * v).sum::<f64>() / (n as f64).sqrt()
}

/// Observed information `Gamma_n(theta) = -n^{-1} d^2_theta H_n(theta)`.
pub fn observed_information(eval: &QlikEval, n: usize) -> DMatrix<f64> {
    -&eval.hess / n as f64
}

fn quad_form(m: &DMatrix<f64>, u: &[f64]) -> f64 {
    let v = DVector::from_column_slice(u);
    (v.transpose() * m * &v)[(0, 0)]
}

/// Taylor remainder in integral form,
/// `r_n(u) = int_0^1 (1 - s) { G[u, u] - Gamma_n(theta* + s u / sqrt(n))[u, u] } ds`,
/// so that `log Z_n(u) = Delta_n[u] - G[u, u] / 2 + r_n(u)` for any symmetric `G`.
/// Evaluated with 24-point Gauss-Legendre quadrature.
pub fn taylor_remainder(
    q: &QuasiLikelihood<'_>,
    theta_star: &[f64],
    u: &[f64],
    reference: &DMatrix<f64>,
) -> Result<f64> {
    local_theta(q.model, q.obs.n, theta_star, u)?;
    let sq = (q.obs.n as f64).sqrt();
    let (nodes, weights) = gauss_legendre(24);
    let g_uu = quad_form(reference, u);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let s = 0.5 * (x + 1.0);
        let theta: Vec<f64> = theta_star.iter().zip(u).map(|(t, v)| t + s * v / sq).collect();
        let e = q.eval(&theta)?;
        let gn = observed_information(&e, q.obs.n);
        acc += 0.5 * w * (1.0 - s) * (g_uu - quad_form(&gn, u));
    }
    Ok(acc)
}

/// `Y_n(theta) = n^{-1} (H_n(theta) - H_n(theta*))`.
pub fn y_field(obs: &Observations, model: &ModelSpec, theta_star: &[f64], theta: &[f64]) -> Result<f64> {
    let q = QuasiLikelihood::new(obs, model)?;
    Ok((q.value(theta)? - q.value(theta_star)?) / obs.n as f64)
}

/// Limit field
/// `Y(theta) = -(2T)^{-1} int_0^T { log(det S(X_t, theta) / det S(X_t, theta*)) + Tr(S^{-1}(X_t, theta) S(X_t, theta*) - I_m) } dt`,
/// using only the covariate values of `obs`.
pub fn y_limit(obs: &Observations, model: &ModelSpec, theta_star: &[f64], theta: &[f64]) -> Result<f64> {
    Ok(-0.5 * QuasiLikelihood::new(obs, model)?.mean_divergence(theta, theta_star)?)
}

pub fn gamma_info(obs: &Observations, model: &ModelSpec, theta_star: &[f64]) -> Result<GammaInfo> {
    QuasiLikelihood::new(obs, model)?.gamma_info(theta_star)
}
