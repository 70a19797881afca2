//! Nondegeneracy diagnostics: the divergence `Q`, the key index `chi_0`,
//! Monte Carlo tail curves for `chi_0` and for the likelihood ratio field,
//! the polynomial separation bound, and grid checks of supporting-function
//! lower bounds.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{builtin, ModelSpec};
use crate::numerics::{golden_section_min, linspace};
use crate::qlik::{log_z_field, scalar_divergence_log, Observations, QuasiLikelihood};
use crate::simulate::{simulate_path_stream, Scheme, SimConfig, DEFAULT_SUBSTEPS};
use crate::stats::{isotonic_nonincreasing, ols, wilson_interval};

/// `Q(x, theta, theta*) = Tr(S^{-1} S* - I) - log det(S^{-1} S*)` with
/// `S = S(x, theta)` and `S* = S(x, theta*)`. Analytically nonnegative; tiny
/// negative rounding is clamped to zero.
pub fn q_divergence(model: &ModelSpec, x: &[f64], theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    model.theta_domain.check_closed(theta)?;
    model.theta_domain.check_closed(theta_star)?;
    if theta == theta_star {
        return Ok(0.0);
    }
    let q = if model.m() == 1 {
        let mut buf = model.sigma_buffer();
        let s = model.scalar_s(x, theta, &mut buf);
        let s_star = model.scalar_s(x, theta_star, &mut buf);
        if !(s > 0.0 && s_star > 0.0 && s.is_finite() && s_star.is_finite()) {
            return Err(QlaError::NonSpd { step: None });
        }
        scalar_divergence_log(s_star.ln() - s.ln())
    } else {
        let f = model.s_chol_logdet_inv(x, theta)?;
        let f_star = model.s_chol_logdet_inv(x, theta_star)?;
        let s_star = f_star.chol.clone() * f_star.chol.transpose();
        (&f.inv * s_star).trace() - model.m() as f64 - (f_star.log_det - f.log_det)
    };
    if q < -1e-10 {
        log::warn!("divergence evaluated to {q:e}; clamping to 0");
    }
    Ok(q.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiOptions {
    /// Grid points per axis for the far regime; defaults to 513, 129, 33
    /// for p = 1, 2, 3.
    pub points: Option<usize>,
    /// Radius of the excluded ball around `theta*`, relative to `diam(Theta)`.
    pub delta_rel: f64,
    pub refine: bool,
}

impl Default for ChiOptions {
    fn default() -> Self {
        Self { points: None, delta_rel: 1e-3, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi0Report {
    pub value: f64,
    /// Minimum of the ratio over the grid (and its refinement) outside the
    /// excluded ball.
    pub far_value: f64,
    pub far_argmin: Vec<f64>,
    /// Limit of the ratio at `theta*`: half the smallest eigenvalue of
    /// `Gamma(theta*)`.
    pub local_value: f64,
    pub grid_too_coarse: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `chi_0 = inf_{theta != theta*} -Y(theta) / |theta - theta*|^2` along the
/// covariate path in `obs`.
pub fn chi0(obs: &Observations, model: &ModelSpec, theta_star: &[f64], opts: &ChiOptions) -> Result<f64> {
    Ok(chi0_report(obs, model, theta_star, opts)?.value)
}

pub fn chi0_report(obs: &Observations, model: &ModelSpec, theta_star: &[f64], opts: &ChiOptions) -> Result<Chi0Report> {
    let q = QuasiLikelihood::new(obs, model)?;
    let dom = &model.theta_domain;
    dom.check_closed(theta_star)?;
    let p = model.p();
    let delta = opts.delta_rel * dom.diameter();
    let points = opts.points.unwrap_or(match p {
        1 => 513,
        2 => 129,
        _ => 33,
    });
    let ratio = |theta: &[f64]| -> Result<f64> {
        Ok(0.5 * q.mean_divergence(theta, theta_star)? / sq_dist(theta, theta_star))
    };

    let axes: Vec<Vec<f64>> = (0..p).map(|i| linspace(dom.lo()[i], dom.hi()[i], points)).collect();
    let mut best = f64::INFINITY;
    let mut best_idx: Option<Vec<usize>> = None;
    let mut idx = vec![0usize; p];
    loop {
        let theta: Vec<f64> = (0..p).map(|i| axes[i][idx[i]]).collect();
        if sq_dist(&theta, theta_star).sqrt() >= delta {
            let r = ratio(&theta)?;
            if r < best {
                best = r;
                best_idx = Some(idx.clone());
            }
        }
        let mut a = 0;
        while a < p {
            idx[a] += 1;
            if idx[a] < points {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == p {
            break;
        }
    }

    let mut far_argmin = Vec::new();
    let mut grid_too_coarse = false;
    if let Some(bi) = best_idx {
        far_argmin = (0..p).map(|i| axes[i][bi[i]]).collect();
        if opts.refine {
            let mut theta = far_argmin.clone();
            for a in 0..p {
                let cell = axes[a][1] - axes[a][0];
                let lo = (theta[a] - 2.0 * cell).max(dom.lo()[a]);
                let hi = (theta[a] + 2.0 * cell).min(dom.hi()[a]);
                let mut probe = theta.clone();
                let (t, v) = golden_section_min(
                    |t| {
                        probe[a] = t;
                        if sq_dist(&probe, theta_star).sqrt() < delta {
                            return f64::INFINITY;
                        }
                        ratio(&probe).unwrap_or(f64::INFINITY)
                    },
                    lo,
                    hi,
                    1e-10 * dom.width(a).max(1.0),
                );
                if v < best {
                    if (t - far_argmin[a]).abs() > cell * (1.0 + 1e-9) {
                        grid_too_coarse = true;
                    }
                    best = v;
                    theta[a] = t;
                }
            }
            if grid_too_coarse {
                log::warn!("chi0 refinement moved the argmin by more than one grid cell");
            }
            far_argmin = theta;
        }
    }

    let g = q.gamma_info(theta_star)?;
    let local_value = 0.5 * g.min_eigenvalue;
    let value = best.min(local_value);
    if value < -1e-10 {
        log::warn!("chi0 evaluated to {value:e}");
    }
    Ok(Chi0Report { value: value.max(0.0), far_value: best, far_argmin, local_value, grid_too_coarse })
}

/// Simulation settings shared by the Monte Carlo diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n: usize,
    pub horizon: f64,
    pub replicates: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub substeps: usize,
    pub execution: Execution,
}

impl McSettings {
    pub fn new(n: usize, horizon: f64, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            horizon,
            replicates,
            seed,
            scheme: Scheme::Milstein,
            substeps: DEFAULT_SUBSTEPS,
            execution: Execution::default(),
        }
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.n, self.horizon).with_scheme(self.scheme).with_substeps(self.substeps)
    }

    fn path(&self, model: &ModelSpec, theta_star: &[f64], j: usize) -> Result<Observations> {
        let path = simulate_path_stream(model, &self.sim_config(), theta_star, self.seed, j as u64)?;
        Ok(Observations::from_path(&path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegReport {
    pub chi0_samples: Vec<f64>,
    pub r_grid: Vec<f64>,
    /// Raw frequencies of `chi_0 <= 1 / r`.
    pub tail_prob_raw: Vec<f64>,
    /// Nonincreasing (isotonic) fit of the raw frequencies.
    pub tail_prob: Vec<f64>,
    /// 95% Wilson intervals for the raw frequencies.
    pub tail_ci: Vec<(f64, f64)>,
    /// Least-squares slope of `log P` against `log r` over the cells with
    /// `0 < P < 1`; negative for a decaying tail.
    pub fitted_exponent: Option<f64>,
    /// Frequencies of `sup_{|u| >= r} Z_n(u) >= e^{-r}` when computed.
    pub zn_tail: Option<Vec<Option<f64>>>,
    pub replicates: usize,
}

fn tail_summary(chi: &[f64], r_grid: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, Option<f64>) {
    let total = chi.len();
    if total == 0 {
        return (Vec::new(), Vec::new(), r_grid.iter().map(|_| (0.0, 1.0)).collect(), None);
    }
    let mut raw = Vec::with_capacity(r_grid.len());
    let mut ci = Vec::with_capacity(r_grid.len());
    for r in r_grid {
        let hits = chi.iter().filter(|c| **c <= 1.0 / r).count();
        raw.push(hits as f64 / total as f64);
        ci.push(wilson_interval(hits, total, 1.959963984540054));
    }
    let iso = isotonic_nonincreasing(&raw);
    let (xs, ys): (Vec<f64>, Vec<f64>) = r_grid
        .iter()
        .zip(&raw)
        .filter(|(_, p)| **p > 0.0 && **p < 1.0)
        .map(|(r, p)| (r.ln(), p.ln()))
        .unzip();
    let slope = ols(&xs, &ys).map(|(s, _)| s);
    (raw, iso, ci, slope)
}

/// Monte Carlo estimate of `P[chi_0 <= 1 / r]` over `r_grid`.
pub fn h2_tail_curve(
    model: &ModelSpec,
    theta_star: &[f64],
    r_grid: &[f64],
    mc: &McSettings,
    chi_opts: &ChiOptions,
) -> Result<NondegReport> {
    model.theta_domain.check_closed(theta_star)?;
    let samples: Vec<Result<f64>> = map_indexed(mc.execution, mc.replicates, |j| {
        let obs = mc.path(model, theta_star, j)?;
        chi0(&obs, model, theta_star, chi_opts)
    });
    let chi0_samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let (tail_prob_raw, tail_prob, tail_ci, fitted_exponent) = tail_summary(&chi0_samples, r_grid);
    Ok(NondegReport {
        chi0_samples,
        r_grid: r_grid.to_vec(),
        tail_prob_raw,
        tail_prob,
        tail_ci,
        fitted_exponent,
        zn_tail: None,
        replicates: mc.replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldiReport {
    pub r_grid: Vec<f64>,
    /// Event frequency per `r`; `None` where no grid point has `|u| >= r`.
    pub frequency: Vec<Option<f64>>,
    pub hits: Vec<usize>,
    pub ci: Vec<(f64, f64)>,
    /// Per `r`, whether `V_n(r)` misses the `u`-grid.
    pub empty_region: Vec<bool>,
    pub replicates: usize,
}

/// Symmetric one-dimensional `u`-grid: `points` equispaced values on
/// `[-u_max, u_max]` plus `+-r` for every `r` in `r_grid`.
pub fn default_u_grid(u_max: f64, points: usize, r_grid: &[f64]) -> Vec<Vec<f64>> {
    let mut g = linspace(-u_max, u_max, points);
    for r in r_grid {
        g.push(*r);
        g.push(-*r);
    }
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup();
    g.into_iter().map(|u| vec![u]).collect()
}

/// Frequencies of `{ sup_{u in V_n(r)} Z_n(u) >= e^{-r} }` with
/// `V_n(r) = {u in U_n : |u| >= r}` restricted to `u_grid`.
pub fn pldi_tail(
    model: &ModelSpec,
    theta_star: &[f64],
    r_grid: &[f64],
    u_grid: &[Vec<f64>],
    mc: &McSettings,
) -> Result<PldiReport> {
    let dom = &model.theta_domain;
    dom.check_closed(theta_star)?;
    let sq = (mc.n as f64).sqrt();
    let inside: Vec<&Vec<f64>> = u_grid
        .iter()
        .filter(|u| {
            let theta: Vec<f64> = theta_star.iter().zip(u.iter()).map(|(t, v)| t + v / sq).collect();
            u.len() == theta_star.len() && dom.contains_closed(&theta)
        })
        .collect();
    let norms: Vec<f64> = inside.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let empty_region: Vec<bool> = r_grid.iter().map(|r| !norms.iter().any(|n| n >= r)).collect();
    for (r, e) in r_grid.iter().zip(&empty_region) {
        if *e {
            log::warn!("{}", QlaError::EmptyRegion(*r));
        }
    }

    let events: Vec<Result<Vec<bool>>> = map_indexed(mc.execution, mc.replicates, |j| {
        let obs = mc.path(model, theta_star, j)?;
        let q = QuasiLikelihood::new(&obs, model)?;
        let lz = inside.iter().map(|u| log_z_field(&q, theta_star, u)).collect::<Result<Vec<f64>>>()?;
        Ok(r_grid
            .iter()
            .map(|r| {
                let sup = norms
                    .iter()
                    .zip(&lz)
                    .filter(|(n, _)| **n >= *r)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                sup >= -r
            })
            .collect())
    });
    let events = events.into_iter().collect::<Result<Vec<_>>>()?;
    let mut hits = vec![0usize; r_grid.len()];
    for ev in &events {
        for (h, e) in hits.iter_mut().zip(ev) {
            *h += *e as usize;
        }
    }
    let frequency = hits
        .iter()
        .zip(&empty_region)
        .map(|(h, e)| if *e || mc.replicates == 0 { None } else { Some(*h as f64 / mc.replicates as f64) })
        .collect();
    let ci = hits.iter().map(|h| wilson_interval(*h, mc.replicates, 1.959963984540054)).collect();
    Ok(PldiReport { r_grid: r_grid.to_vec(), frequency, hits, ci, empty_region, replicates: mc.replicates })
}

// ---------------------------------------------------------------------------
// Polynomial separation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCell {
    pub n: f64,
    /// Smallest observed `max_i inf_u |p(c * u, n^{-alpha_i})|`.
    pub min_value: f64,
    pub argmin: Vec<f64>,
    /// `-log(min_value) / log(n)`.
    pub implied_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub degree: usize,
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
    pub cells: Vec<SeparationCell>,
    pub min_positive: bool,
}

/// `inf_{u in U_eps} |sum_j c_j u_j x^j|` with `eps <= |u_j| <= 1 / eps`.
///
/// Each term ranges over `+-[eps |c_j| x^j, |c_j| x^j / eps]`; the infimum is
/// taken exactly by enumerating sign patterns.
pub fn separation_inner_inf(c: &[f64], x: f64, eps: f64) -> f64 {
    let k = c.len();
    let mag: Vec<f64> = c.iter().enumerate().map(|(j, cj)| cj.abs() * x.powi(j as i32)).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << k) {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (j, m) in mag.iter().enumerate() {
            if mask >> j & 1 == 0 {
                lo += eps * m;
                hi += m / eps;
            } else {
                lo -= m / eps;
                hi -= eps * m;
            }
        }
        let v = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
        best = best.min(v);
        if best == 0.0 {
            break;
        }
    }
    best
}

fn separation_objective(c: &[f64], xs: &[f64], eps: f64) -> f64 {
    xs.iter().map(|x| separation_inner_inf(c, *x, eps)).fold(0.0, f64::max)
}

fn from_log_weights(z: &[f64], delta: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| delta * v / s).collect()
}

/// Sampling check of the polynomial separation bound
/// `inf_{|c|_1 >= delta} max_i inf_{u in U_eps} |p(c * u, n^{-alpha_i})| >= n^{-L}`
/// with `p(c, x) = c_0 + c_1 x + ... + c_J x^J`.
///
/// The objective is positively homogeneous and sign-symmetric in `c`, so the
/// search runs over nonnegative `c` with `|c|_1 = delta`, parametrized by log
/// weights: `samples` random starts with log-uniform magnitudes, followed by
/// a pattern search from the best few.
pub fn separation_check(
    degree: usize,
    alphas: &[f64],
    delta: f64,
    eps: f64,
    n_list: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if alphas.len() != degree + 1 || alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(QlaError::InvalidAlphas);
    }
    for i in 0..alphas.len() {
        for j in 0..i {
            if alphas[i] == alphas[j] {
                return Err(QlaError::InvalidAlphas);
            }
        }
    }
    if !(delta > 0.0) {
        return Err(QlaError::Config("delta must be positive".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(QlaError::Config("eps must lie in (0, 1]".into()));
    }
    let k = degree + 1;
    let amax = alphas.iter().copied().fold(0.0, f64::max);
    let mut cells = Vec::with_capacity(n_list.len());
    for (cell_idx, &n) in n_list.iter().enumerate() {
        if !(n > 1.0) {
            return Err(QlaError::Config("n must exceed 1".into()));
        }
        let xs: Vec<f64> = alphas.iter().map(|a| n.powf(-a)).collect();
        let span = n.ln() * (amax * degree as f64 + 2.0);
        let f = |z: &[f64]| separation_objective(&from_log_weights(z, delta), &xs, eps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cell_idx as u64);

        let mut starts: Vec<(f64, Vec<f64>)> = Vec::with_capacity(samples + k);
        for j in 0..k {
            let z: Vec<f64> = (0..k).map(|i| if i == j { 0.0 } else { -span }).collect();
            starts.push((f(&z), z));
        }
        for _ in 0..samples {
            let z: Vec<f64> = (0..k).map(|_| -span * rng.random::<f64>()).collect();
            starts.push((f(&z), z));
        }
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = starts[0].clone();
        for (v0, z0) in starts.into_iter().take(8) {
            let (mut v, mut z) = (v0, z0);
            let mut step = 1.0;
            while step > 1e-7 {
                let mut improved = false;
                let mut dirs: Vec<Vec<f64>> = (0..k)
                    .flat_map(|i| {
                        [1.0, -1.0].map(|s| (0..k).map(|j| if j == i { s } else { 0.0 }).collect::<Vec<f64>>())
                    })
                    .collect();
                for _ in 0..2 * k {
                    let d: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                    dirs.push(d.into_iter().map(|v| v / norm).collect());
                }
                for d in dirs {
                    let cand: Vec<f64> = z.iter().zip(&d).map(|(a, b)| (a + step * b).clamp(-span, span)).collect();
                    let cv = f(&cand);
                    if cv < v {
                        v = cv;
                        z = cand;
                        improved = true;
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if v < best.0 {
                best = (v, z);
            }
        }
        let argmin = from_log_weights(&best.1, delta);
        cells.push(SeparationCell { n, min_value: best.0, argmin, implied_l: -best.0.ln() / n.ln() });
    }
    let min_positive = cells.iter().all(|c| c.min_value > 0.0);
    Ok(SeparationReport { degree, alphas: alphas.to_vec(), delta, eps, cells, min_positive })
}

// ---------------------------------------------------------------------------
// Supporting-function bounds
// ---------------------------------------------------------------------------

/// A lower bound `Q(x, theta, theta*) |theta - theta*|^{-2} >= c |f(x, theta)|^rho`
/// claimed on `x in U` for a scalar model.
#[derive(Clone)]
pub struct SupportingFunctionSpec {
    pub name: String,
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub rho: f64,
    pub coefficient: f64,
    pub x_range: (f64, f64),
    pub model: ModelSpec,
}

impl std::fmt::Debug for SupportingFunctionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SupportingFunctionSpec")
            .field("name", &self.name)
            .field("rho", &self.rho)
            .field("coefficient", &self.coefficient)
            .field("x_range", &self.x_range)
            .field("model", &self.model.name)
            .finish()
    }
}

impl SupportingFunctionSpec {
    pub fn new(
        name: impl Into<String>,
        f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        rho: f64,
        coefficient: f64,
        x_range: (f64, f64),
        model: ModelSpec,
    ) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(QlaError::Config("rho must be positive".into()));
        }
        if model.p() != 1 || model.dims.d != 1 || model.m() != 1 {
            return Err(QlaError::Config("supporting-function checks need a scalar model".into()));
        }
        if !(x_range.0 < x_range.1) {
            return Err(QlaError::Config("x range must be a nonempty interval".into()));
        }
        Ok(Self { name: name.into(), f, rho, coefficient, x_range, model })
    }

    /// `power`: `f = log(1 + x^2)`, `rho = 2`, `U = (-1, 1)`, `c = 1`.
    pub fn power() -> Self {
        Self::new("power", Arc::new(|x: f64, _t: f64| (1.0 + x * x).ln()), 2.0, 1.0, (-1.0, 1.0), builtin("power").unwrap())
            .expect("valid built-in")
    }

    /// `sin-sin` about `theta* = 0`: `f = (sin(theta) sin(x) - theta^2 sin^2(x)) / theta`
    /// (equal to `sin x` at `theta = 0`), `rho = 2`, `U = (-1/2, 1/2)`, `c = 1e-3`.
    ///
    /// Since `Q = e^d - 1 - d` with `d = -2 theta f`, `Q / theta^2 >= 2 f^2 e^{-2 |theta f|}`,
    /// and `|theta f| <= sin(1/2) + pi^2 sin^2(1/2)` on the box.
    pub fn sin_sin() -> Self {
        let f = |x: f64, t: f64| {
            if t == 0.0 {
                x.sin()
            } else {
                (t.sin() * x.sin() - t * t * x.sin().powi(2)) / t
            }
        };
        Self::new("sin-sin", Arc::new(f), 2.0, 1e-3, (-0.5, 0.5), builtin("sin-sin").unwrap()).expect("valid built-in")
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "power" => Ok(Self::power()),
            "sin-sin" => Ok(Self::sin_sin()),
            other => Err(QlaError::Config(format!("no supporting function registered for '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub name: String,
    pub theta_star: f64,
    pub points_checked: usize,
    pub min_slack: f64,
    pub argmin: (f64, f64),
    /// Up to 100 grid points `(x, theta, slack)` with negative slack.
    pub violations: Vec<(f64, f64, f64)>,
    pub violation_count: usize,
}

/// Evaluates `Q / |theta - theta*|^2 - c |f|^rho` on an `nx x ntheta` grid
/// over `U x Theta`, skipping `|theta - theta*| < 1e-9`.
pub fn supporting_bound_check(
    spec: &SupportingFunctionSpec,
    theta_star: f64,
    nx: usize,
    ntheta: usize,
) -> Result<SupportReport> {
    let dom = &spec.model.theta_domain;
    let mut min_slack = f64::INFINITY;
    let mut argmin = (f64::NAN, f64::NAN);
    let mut violations = Vec::new();
    let mut violation_count = 0;
    let mut points_checked = 0;
    for x in linspace(spec.x_range.0, spec.x_range.1, nx) {
        for t in linspace(dom.lo()[0], dom.hi()[0], ntheta) {
            if (t - theta_star).abs() < 1e-9 {
                continue;
            }
            let q = q_divergence(&spec.model, &[x], &[t], &[theta_star])?;
            let slack = q / (t - theta_star).powi(2) - spec.coefficient * (spec.f)(x, t).abs().powf(spec.rho);
            points_checked += 1;
            if slack < min_slack {
                min_slack = slack;
                argmin = (x, t);
            }
            if slack < 0.0 {
                violation_count += 1;
                if violations.len() < 100 {
                    violations.push((x, t, slack));
                }
            }
        }
    }
    Ok(SupportReport {
        name: spec.name.clone(),
        theta_star,
        points_checked,
        min_slack,
        argmin,
        violations,
        violation_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriftConfig, Form, ModelConfig};
    use crate::qlik::Provenance;

    fn custom(form: Form, lo: f64, hi: f64) -> ModelSpec {
        ModelConfig {
            name: "t".into(),
            form,
            theta_domain: vec![[lo, hi]; form.dims().p],
            drift: DriftConfig::Zero,
            y0: None,
            analytic_derivatives: true,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn q_examples() {
        let m = custom(Form::ExpLinear { a: 1.0, c: 1.0 }, -2.0, 2.0);
        assert_eq!(q_divergence(&m, &[0.3], &[0.2], &[0.2]).unwrap(), 0.0);
        // S(theta) = 2, S(theta*) = 1
        let t = 0.5 * 2f64.ln();
        let q = q_divergence(&m, &[0.0], &[t], &[0.0]).unwrap();
        assert!((q - (2f64.ln() - 0.5)).abs() < 1e-14, "{q}");
    }

    #[test]
    fn matrix_q_matches_formula() {
        let m = custom(Form::CoupledExp2 { rho: 0.4 }, -1.0, 1.0);
        let x = [0.3, -1.2];
        let (th, ts) = ([0.2, -0.4], [-0.1, 0.5]);
        let s = m.s_matrix(&x, &th).unwrap();
        let s_star = m.s_matrix(&x, &ts).unwrap();
        let a = s.clone().try_inverse().unwrap() * &s_star;
        let oracle = a.trace() - 2.0 - a.determinant().ln();
        let q = q_divergence(&m, &x, &th, &ts).unwrap();
        assert!((q - oracle).abs() < 1e-12);
    }

    fn x_free_obs(n: usize) -> Observations {
        Observations::new(1.0, 1, 1, vec![0.0; n + 1], vec![0.0; n + 1], Provenance::Constructed).unwrap()
    }

    #[test]
    fn chi0_closed_form_exponential_scale() {
        // ratio(theta) = (e^{-2 theta} - 1 + 2 theta) / (2 theta^2), decreasing on (-1, 1)
        let m = custom(Form::ExpLinear { a: 1.0, c: 1.0 }, -1.0, 1.0);
        let obs = x_free_obs(10);
        let rep = chi0_report(&obs, &m, &[0.0], &ChiOptions::default()).unwrap();
        let exact = ((-2f64).exp() + 1.0) / 2.0;
        assert!((rep.value - exact).abs() < 1e-6, "{}", rep.value);
        assert!((rep.local_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi0_of_constant_model_is_zero() {
        let m = custom(Form::Constant { value: 1.3 }, -1.0, 1.0);
        let obs = x_free_obs(10);
        assert_eq!(chi0(&obs, &m, &[0.2], &ChiOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn chi0_bounded_below_for_dense_grid() {
        let m = builtin("exp-sin2").unwrap();
        let path = simulate_path_stream(&m, &SimConfig::new(200, 1.0), &[1.0], 5, 0).unwrap();
        let obs = Observations::from_path(&path);
        let c = chi0(&obs, &m, &[1.0], &ChiOptions::default()).unwrap();
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let mut dense = f64::INFINITY;
        for t in linspace(-std::f64::consts::PI, std::f64::consts::PI, 20_001) {
            if (t - 1.0f64).abs() > 1e-6 {
                dense = dense.min(0.5 * q.mean_divergence(&[t], &[1.0]).unwrap() / (t - 1.0).powi(2));
            }
        }
        assert!(dense >= c - 1e-6);
        assert!((dense - c).abs() / dense < 1e-3, "{dense} vs {c}");
    }

    #[test]
    fn tail_trivial_cases() {
        let m = custom(Form::ExpLinear { a: 1.0, c: 1.0 }, -1.0, 1.0);
        let mc = McSettings { execution: Execution::Sequential, ..McSettings::new(20, 1.0, 5, 1) };
        let rep = h2_tail_curve(&m, &[0.0], &[1.0, 2.0, 3.0], &mc, &ChiOptions::default()).unwrap();
        // chi0 = 0.5677 on every path, so P[chi0 <= 1/r] = 0 once r > 1 / 0.5677
        assert_eq!(rep.tail_prob_raw, vec![1.0, 0.0, 0.0]);
        assert_eq!(rep.tail_ci[1].0, 0.0);

        let empty = McSettings { replicates: 0, ..mc };
        let rep = h2_tail_curve(&m, &[0.0], &[2.0], &empty, &ChiOptions::default()).unwrap();
        assert!(rep.chi0_samples.is_empty() && rep.tail_prob.is_empty());
    }

    #[test]
    fn pldi_flags_empty_region_and_nests() {
        let m = builtin("exp-sin2").unwrap();
        let mc = McSettings { execution: Execution::Sequential, ..McSettings::new(100, 1.0, 30, 2) };
        let r_grid = [0.25, 0.5, 1.0, 2.0, 4.0, 100.0];
        let u_max = 10.0 * 2.0 * std::f64::consts::PI;
        let rep = pldi_tail(&m, &[1.0], &r_grid, &default_u_grid(u_max, 401, &r_grid[..5]), &mc).unwrap();
        assert!(rep.empty_region[5] && rep.frequency[5].is_none());
        for w in rep.hits[..5].windows(2) {
            assert!(w[0] >= w[1], "{:?}", rep.hits);
        }
    }

    #[test]
    fn separation_degree_zero() {
        let r = separation_check(0, &[1.0], 0.5, 0.5, &[10.0, 1e3], 50, 1).unwrap();
        for c in &r.cells {
            assert!((c.min_value - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn separation_linear_matches_vandermonde_oracle() {
        for n in [1e3, 1e6] {
            let r = separation_check(1, &[1.0, 2.0], 1.0, 1.0, &[n], 200, 3).unwrap();
            // balance |a - b/n| = |a - b/n^2| with a + b = 1
            let (x1, x2) = (1.0 / n, 1.0 / (n * n));
            let b = 1.0 / (1.0 + 0.5 * (x1 + x2));
            let oracle = 0.5 * b * (x1 - x2);
            let got = r.cells[0].min_value;
            assert!((got - oracle).abs() / oracle < 1e-6, "n={n}: {got} vs {oracle}");
        }
    }

    #[test]
    fn separation_rejects_bad_alphas() {
        assert_eq!(separation_check(1, &[1.0, 1.0], 1.0, 0.5, &[10.0], 5, 0).unwrap_err(), QlaError::InvalidAlphas);
        assert_eq!(separation_check(1, &[1.0], 1.0, 0.5, &[10.0], 5, 0).unwrap_err(), QlaError::InvalidAlphas);
        assert_eq!(separation_check(0, &[-1.0], 1.0, 0.5, &[10.0], 5, 0).unwrap_err(), QlaError::InvalidAlphas);
    }

    #[test]
    fn inner_inf_by_sign_enumeration() {
        // c = (1, 1), x = 1, eps = 1: u = (1, -1) cancels
        assert_eq!(separation_inner_inf(&[1.0, 1.0], 1.0, 1.0), 0.0);
        // c = (1, 0.1), x = 1, eps = 1: 1 - 0.1
        assert!((separation_inner_inf(&[1.0, 0.1], 1.0, 1.0) - 0.9).abs() < 1e-15);
        // eps = 0.5: 0.5 * 1 - 2 * 0.1
        assert!((separation_inner_inf(&[1.0, 0.1], 1.0, 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn supporting_bounds_hold_for_examples() {
        let r = supporting_bound_check(&SupportingFunctionSpec::power(), 0.25, 201, 201).unwrap();
        assert!(r.min_slack >= 0.0 && r.violation_count == 0, "{r:?}");
        let r = supporting_bound_check(&SupportingFunctionSpec::sin_sin(), 0.0, 101, 101).unwrap();
        assert!(r.min_slack >= 0.0, "{r:?}");
        let zero = SupportingFunctionSpec::new("zero", Arc::new(|_, _| 0.0), 2.0, 1.0, (-1.0, 1.0), builtin("power").unwrap())
            .unwrap();
        let r = supporting_bound_check(&zero, 0.1, 41, 41).unwrap();
        assert!(r.min_slack >= 0.0);
    }

    #[test]
    fn power_bound_on_dense_grid() {
        let spec = SupportingFunctionSpec::power();
        for ts in [0.0, 0.1, 0.5] {
            let r = supporting_bound_check(&spec, ts, 101, 101).unwrap();
            assert_eq!(r.violation_count, 0);
        }
    }
}
