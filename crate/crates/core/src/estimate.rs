//! Quasi-maximum-likelihood and Bayes-type (posterior mean) estimators.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::model::{ModelSpec, ThetaBox};
use crate::numerics::{linspace, simpson_weights};
use crate::optim::{projected_newton, NewtonOptions};
use crate::qlik::{observed_information, Observations, QuasiLikelihood};

/// Number of equispaced points per axis in the coarse verification grid.
pub const MULTISTART_POINTS: usize = 17;

/// Per-axis size of the multistart scan for p = 1, 2, 3. Each is
/// `16k + 1`, so the scan contains the coarse verification grid.
const SCAN_POINTS: [usize; 3] = [513, 65, 33];

/// Newton is restarted from this many of the best grid-local maxima.
const SCAN_STARTS: usize = 8;

/// Log-weights further than this below the maximum are dropped when the
/// Bayes grid is re-centred (`e^-40` is below double precision relative to
/// the peak).
const REFINE_LOG_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum Prior {
    #[default]
    Uniform,
    /// Piecewise-linear density on a grid covering the parameter interval
    /// (one-dimensional parameters only).
    Table { grid: Vec<f64>, density: Vec<f64> },
}


impl Prior {
    pub fn validate(&self, domain: &ThetaBox) -> Result<()> {
        match self {
            Prior::Uniform => Ok(()),
            Prior::Table { grid, density } => {
                if domain.dim() != 1 {
                    return Err(QlaError::Config("tabulated priors need a one-dimensional parameter".into()));
                }
                if grid.len() < 2 || grid.len() != density.len() {
                    return Err(QlaError::Config("prior table needs matching grid and density, length >= 2".into()));
                }
                if grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(QlaError::Config("prior grid must be strictly increasing".into()));
                }
                if grid[0] > domain.lo()[0] || grid[grid.len() - 1] < domain.hi()[0] {
                    return Err(QlaError::Config("prior grid must cover the parameter interval".into()));
                }
                let min = density.iter().copied().fold(f64::INFINITY, f64::min);
                if !(min > 0.0) || density.iter().any(|d| !d.is_finite()) {
                    return Err(QlaError::Config("prior density must be finite and strictly positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            Prior::Uniform => 0.0,
            Prior::Table { grid, density } => {
                let t = theta[0];
                let i = grid.partition_point(|g| *g <= t).clamp(1, grid.len() - 1);
                let w = ((t - grid[i - 1]) / (grid[i] - grid[i - 1])).clamp(0.0, 1.0);
                ((1.0 - w) * density[i - 1] + w * density[i]).ln()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    Qmle { init: Vec<f64> },
    Bayes { prior: Prior },
    QmleBayesInit { prior: Prior },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub kind: EstimatorKind,
    pub theta_hat: Vec<f64>,
    /// `H_n` at the estimate (quasi-likelihood maximizers only).
    pub objective: Option<f64>,
    /// Observed information `-n^{-1} d^2 H_n` at the estimate.
    pub gamma_n: Option<DMatrix<f64>>,
    /// `sqrt(n) (theta_hat - theta*)`.
    pub std_error: Option<Vec<f64>>,
    /// `Gamma^{1/2} sqrt(n) (theta_hat - theta*)`.
    pub standardized: Option<Vec<f64>>,
    pub converged: bool,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmleOptions {
    pub newton: NewtonOptions,
    /// Verify against the 17-point grid and restart from better grid points.
    pub multistart: bool,
}

impl Default for QmleOptions {
    fn default() -> Self {
        Self { newton: NewtonOptions::default(), multistart: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesOptions {
    /// Grid points per axis (odd); defaults to 1025, 257, 65 for p = 1, 2, 3.
    pub points: Option<usize>,
    /// Second pass on the region carrying the posterior mass.
    pub refine: bool,
}

impl Default for BayesOptions {
    fn default() -> Self {
        Self { points: None, refine: true }
    }
}

fn margined_bounds(domain: &ThetaBox) -> (Vec<f64>, Vec<f64>) {
    let lo = (0..domain.dim()).map(|i| domain.lo()[i] + domain.margin(i)).collect();
    let hi = (0..domain.dim()).map(|i| domain.hi()[i] - domain.margin(i)).collect();
    (lo, hi)
}

/// Tensor grid of `points` per axis, visited in lexicographic order.
fn tensor_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Whether grid entry `k` is at least as large as its axis neighbours.
fn is_local_max(values: &[f64], k: usize, per_axis: usize, p: usize) -> bool {
    let mut stride = 1;
    for _ in 0..p {
        let pos = (k / stride) % per_axis;
        if pos > 0 && values[k - stride] > values[k] {
            return false;
        }
        if pos + 1 < per_axis && values[k + stride] > values[k] {
            return false;
        }
        stride *= per_axis;
    }
    true
}

/// Maximizes `H_n` from `init` by projected Newton on the margined box.
pub fn qmle(obs: &Observations, model: &ModelSpec, init: &[f64], opts: &QmleOptions) -> Result<EstimationResult> {
    let q = QuasiLikelihood::new(obs, model)?;
    qmle_with(&q, init, opts)
}

pub fn qmle_with(q: &QuasiLikelihood<'_>, init: &[f64], opts: &QmleOptions) -> Result<EstimationResult> {
    let model = q.model();
    let domain = &model.theta_domain;
    if init.len() != model.p() {
        return Err(QlaError::Config(format!("init has length {}, expected {}", init.len(), model.p())));
    }
    domain.check_closed(init)?;
    let (lo, hi) = margined_bounds(domain);
    let mut best = projected_newton(q, init, &lo, &hi, &opts.newton)?;
    let mut evals = best.evals;
    let mut converged = best.converged;

    if opts.multistart {
        let per_axis = SCAN_POINTS[model.p() - 1];
        let axes: Vec<Vec<f64>> = (0..model.p()).map(|i| linspace(lo[i], hi[i], per_axis)).collect();
        let grid = tensor_grid(&axes);
        let values = grid.iter().map(|g| q.value(g)).collect::<Result<Vec<f64>>>()?;
        evals += grid.len();
        let mut starts: Vec<usize> = (0..grid.len()).filter(|&k| is_local_max(&values, k, per_axis, model.p())).collect();
        starts.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
        starts.truncate(SCAN_STARTS);
        for k in starts {
            let run = projected_newton(q, &grid[k], &lo, &hi, &opts.newton)?;
            evals += run.evals;
            if run.value > best.value {
                converged = run.converged;
                best = run;
            }
        }
        // Anything on the scan still above the optimum means Newton stalled
        // short of a peak; restart from it.
        for _ in 0..grid.len() {
            let (k, tv) = values.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            if tv <= best.value + 1e-9 {
                break;
            }
            let run = projected_newton(q, &grid[k], &lo, &hi, &opts.newton)?;
            evals += run.evals;
            converged = run.converged;
            if run.value > best.value {
                best = run;
            } else {
                // Keep the grid point itself; Newton cannot improve on it.
                best.theta = grid[k].clone();
                best.value = tv;
                let e = q.eval(&best.theta)?;
                best.grad = e.grad;
                best.hess = e.hess;
            }
        }
    }

    let gamma_n = observed_information(
        &crate::qlik::QlikEval {
            theta: best.theta.clone(),
            value: best.value,
            grad: best.grad.clone(),
            hess: best.hess.clone(),
        },
        q.observations().n,
    );
    Ok(EstimationResult {
        kind: EstimatorKind::Qmle { init: init.to_vec() },
        theta_hat: best.theta,
        objective: Some(best.value),
        gamma_n: Some(gamma_n),
        std_error: None,
        standardized: None,
        converged,
        evals,
    })
}

/// Posterior mean of `exp(H_n) pi` over the parameter box by composite
/// Simpson quadrature with log-sum-exp stabilization.
pub fn bayes(obs: &Observations, model: &ModelSpec, prior: &Prior, opts: &BayesOptions) -> Result<EstimationResult> {
    let q = QuasiLikelihood::new(obs, model)?;
    bayes_with(&q, prior, opts)
}

struct Pass {
    mean: Vec<f64>,
    axes: Vec<Vec<f64>>,
    log_w: Vec<f64>,
    max: f64,
    evals: usize,
}

/// Weighted mean of tensor-grid nodes given unnormalized log-weights.
/// Subtracting the maximum makes the result invariant to constant shifts.
pub(crate) fn posterior_mean(axes: &[Vec<f64>], log_w: &[f64]) -> Result<Vec<f64>> {
    let p = axes.len();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(QlaError::DegeneratePosterior);
    }
    let simpson: Vec<Vec<f64>> = axes
        .iter()
        .map(|a| simpson_weights(a.len(), (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64))
        .collect();
    let nodes = tensor_grid(axes);
    let idx = tensor_grid(&axes.iter().map(|a| (0..a.len()).map(|i| i as f64).collect()).collect::<Vec<_>>());
    let mut total = 0.0;
    let mut first = vec![0.0; p];
    for ((node, ix), lw) in nodes.iter().zip(&idx).zip(log_w) {
        let mut w = (lw - max).exp();
        for (axis, i) in ix.iter().enumerate() {
            w *= simpson[axis][*i as usize];
        }
        total += w;
        for i in 0..p {
            first[i] += w * node[i];
        }
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(QlaError::DegeneratePosterior);
    }
    Ok(first.into_iter().map(|f| f / total).collect())
}

fn bayes_pass(q: &QuasiLikelihood<'_>, prior: &Prior, bounds: &[(f64, f64)], points: usize) -> Result<Pass> {
    let axes: Vec<Vec<f64>> = bounds.iter().map(|(l, h)| linspace(*l, *h, points)).collect();
    let nodes = tensor_grid(&axes);
    let mut log_w = Vec::with_capacity(nodes.len());
    for node in &nodes {
        log_w.push(q.value(node)? + prior.log_density(node));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = posterior_mean(&axes, &log_w)?;
    Ok(Pass { mean, axes, log_w, max, evals: nodes.len() })
}

pub fn bayes_with(q: &QuasiLikelihood<'_>, prior: &Prior, opts: &BayesOptions) -> Result<EstimationResult> {
    let model = q.model();
    let domain = &model.theta_domain;
    let p = model.p();
    if p > 3 {
        return Err(QlaError::UnsupportedDimension(p));
    }
    prior.validate(domain)?;
    let points = opts.points.unwrap_or(match p {
        1 => 1025,
        2 => 257,
        _ => 65,
    });
    if points < 3 || points.is_multiple_of(2) {
        return Err(QlaError::Config("Bayes grid needs an odd number of points >= 3".into()));
    }
    let full: Vec<(f64, f64)> = (0..p).map(|i| (domain.lo()[i], domain.hi()[i])).collect();
    let mut pass = bayes_pass(q, prior, &full, points)?;
    let mut evals = pass.evals;

    if opts.refine {
        let nodes_idx = tensor_grid(
            &pass.axes.iter().map(|a| (0..a.len()).map(|i| i as f64).collect()).collect::<Vec<_>>(),
        );
        let mut lo_idx = vec![usize::MAX; p];
        let mut hi_idx = vec![0usize; p];
        for (ix, lw) in nodes_idx.iter().zip(&pass.log_w) {
            if *lw >= pass.max - REFINE_LOG_CUTOFF {
                for a in 0..p {
                    let i = ix[a] as usize;
                    lo_idx[a] = lo_idx[a].min(i);
                    hi_idx[a] = hi_idx[a].max(i);
                }
            }
        }
        let bounds: Vec<(f64, f64)> = (0..p)
            .map(|a| {
                let axis = &pass.axes[a];
                let l = lo_idx[a].saturating_sub(1);
                let h = (hi_idx[a] + 1).min(axis.len() - 1);
                (axis[l], axis[h])
            })
            .collect();
        if bounds != full {
            pass = bayes_pass(q, prior, &bounds, points)?;
            evals += pass.evals;
        }
    }

    let theta_hat = pass.mean;
    let gamma_n = q.eval(&theta_hat).ok().map(|e| observed_information(&e, q.observations().n));
    Ok(EstimationResult {
        kind: EstimatorKind::Bayes { prior: prior.clone() },
        theta_hat,
        objective: None,
        gamma_n,
        std_error: None,
        standardized: None,
        converged: true,
        evals,
    })
}

/// QMLE started from the Bayes-type estimate.
pub fn qmle_with_bayes_init(
    obs: &Observations,
    model: &ModelSpec,
    prior: &Prior,
    bayes_opts: &BayesOptions,
    qmle_opts: &QmleOptions,
) -> Result<EstimationResult> {
    let q = QuasiLikelihood::new(obs, model)?;
    let b = bayes_with(&q, prior, bayes_opts)?;
    let mut r = qmle_from_bayes(&q, &b, qmle_opts)?;
    r.evals += b.evals;
    Ok(r)
}

/// Refines an existing Bayes estimate by QMLE; used when the Bayes result is
/// shared with other estimators on the same path.
pub fn qmle_from_bayes(
    q: &QuasiLikelihood<'_>,
    bayes_result: &EstimationResult,
    opts: &QmleOptions,
) -> Result<EstimationResult> {
    let prior = match &bayes_result.kind {
        EstimatorKind::Bayes { prior } => prior.clone(),
        _ => return Err(QlaError::Config("expected a Bayes estimate as initial value".into())),
    };
    let mut r = qmle_with(q, &bayes_result.theta_hat, opts)?;
    r.kind = EstimatorKind::QmleBayesInit { prior };
    Ok(r)
}

/// Symmetric square root of a positive semi-definite matrix.
fn sym_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    (&eig.eigenvectors * d * eig.eigenvectors.transpose(), min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub scaled_error: Vec<f64>,
    pub standardized: Vec<f64>,
}

/// Mixed-normal standardization: `sqrt(n)(theta_hat - theta*)` and
/// `Gamma^{1/2} sqrt(n)(theta_hat - theta*)`, with `Gamma` evaluated along the
/// observed path at the estimate.
pub fn standardize(
    result: &EstimationResult,
    obs: &Observations,
    model: &ModelSpec,
    theta_star: &[f64],
) -> Result<Standardized> {
    let sq = (obs.n as f64).sqrt();
    let scaled: Vec<f64> = result.theta_hat.iter().zip(theta_star).map(|(a, b)| sq * (a - b)).collect();
    let info = QuasiLikelihood::new(obs, model)?.gamma_info(&result.theta_hat)?;
    let (root, min) = sym_sqrt(&info.matrix);
    if min < 1e-12 {
        return Err(QlaError::SingularInformation(min));
    }
    let v = nalgebra::DVector::from_column_slice(&scaled);
    let st = root * v;
    Ok(Standardized { scaled_error: scaled, standardized: st.iter().copied().collect() })
}

/// Fills the optional standardization fields of `result` in place.
pub fn attach_standardization(
    result: &mut EstimationResult,
    obs: &Observations,
    model: &ModelSpec,
    theta_star: &[f64],
) -> Result<()> {
    let s = standardize(result, obs, model, theta_star)?;
    result.std_error = Some(s.scaled_error);
    result.standardized = Some(s.standardized);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, DriftConfig, Form, ModelConfig};
    use crate::qlik::Provenance;
    use crate::simulate::{simulate_path_stream, SimConfig};

    fn sim(model: &ModelSpec, n: usize, theta: f64, stream: u64) -> Observations {
        Observations::from_path(&simulate_path_stream(model, &SimConfig::new(n, 1.0), &[theta], 2024, stream).unwrap())
    }

    fn exp_linear() -> ModelSpec {
        ModelConfig {
            name: "el".into(),
            form: Form::ExpLinear { a: 1.0, c: 1.0 },
            theta_domain: vec![[-2.0, 2.0]],
            drift: DriftConfig::Zero,
            y0: None,
            analytic_derivatives: true,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn qmle_matches_closed_form_for_x_free_model() {
        // S = e^{2 theta}: argmax solves e^{2 theta} = sum(D^2) / (n h)
        let m = exp_linear();
        let obs = sim(&m, 300, 0.4, 1);
        let rv: f64 = (1..=obs.n).map(|k| obs.dy(k)[0].powi(2)).sum();
        let exact = 0.5 * (rv / (obs.n as f64 * obs.h)).ln();
        let r = qmle(&obs, &m, &[-1.5], &QmleOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - exact).abs() < 1e-10, "{} vs {exact}", r.theta_hat[0]);
    }

    #[test]
    fn qmle_matches_dense_grid_argmax() {
        let m = builtin("sin-sin").unwrap();
        let obs = sim(&m, 250, 0.3, 2);
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let r = qmle_with(&q, &[0.5], &QmleOptions::default()).unwrap();
        let argmax = |lo: f64, hi: f64| {
            let (mut bt, mut bv) = (0.0, f64::NEG_INFINITY);
            for t in linspace(lo, hi, 10_001) {
                let v = q.value(&[t]).unwrap();
                if v > bv {
                    bv = v;
                    bt = t;
                }
            }
            (bt, bv)
        };
        let (lo, hi) = (m.theta_domain.lo()[0], m.theta_domain.hi()[0]);
        let (coarse, _) = argmax(lo, hi);
        let cell = (hi - lo) / 10_000.0;
        let (bt, bv) = argmax((coarse - cell).max(lo), (coarse + cell).min(hi));
        assert!((r.theta_hat[0] - bt).abs() < 1e-5, "{} vs {bt}", r.theta_hat[0]);
        assert!(r.objective.unwrap() >= bv - 1e-9);
    }

    #[test]
    fn bayes_of_flat_likelihood_is_midpoint() {
        let m = ModelConfig {
            name: "flat".into(),
            form: Form::Constant { value: 1.0 },
            theta_domain: vec![[-0.7, 1.9]],
            drift: DriftConfig::Zero,
            y0: None,
            analytic_derivatives: true,
        }
        .build()
        .unwrap();
        let obs = sim(&m, 20, 0.0, 3);
        let r = bayes(&obs, &m, &Prior::Uniform, &BayesOptions::default()).unwrap();
        assert!((r.theta_hat[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn bayes_matches_dense_trapezoid() {
        let m = builtin("exp-sin2").unwrap();
        let obs = sim(&m, 100, 1.0, 4);
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let r = bayes_with(&q, &Prior::Uniform, &BayesOptions::default()).unwrap();
        let grid = linspace(-std::f64::consts::PI, std::f64::consts::PI, 200_001);
        let vals: Vec<f64> = grid.iter().map(|t| q.value(&[*t]).unwrap()).collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1) = (0.0, 0.0);
        for (i, (t, v)) in grid.iter().zip(&vals).enumerate() {
            let w = (v - max).exp() * if i == 0 || i == grid.len() - 1 { 0.5 } else { 1.0 };
            z += w;
            m1 += w * t;
        }
        assert!((r.theta_hat[0] - m1 / z).abs() < 1e-6, "{} vs {}", r.theta_hat[0], m1 / z);
    }

    #[test]
    fn posterior_mean_is_shift_invariant() {
        let axes = vec![linspace(-1.0, 1.0, 33)];
        let lw: Vec<f64> = axes[0].iter().map(|t| -8.0 * (t - 0.2f64).powi(2)).collect();
        let a = posterior_mean(&axes, &lw).unwrap();
        for shift in [-700.0, -3.0, 5.0, 600.0] {
            let shifted: Vec<f64> = lw.iter().map(|v| v + shift).collect();
            let b = posterior_mean(&axes, &shifted).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_posterior_detected() {
        let axes = vec![linspace(-1.0, 1.0, 5)];
        assert_eq!(posterior_mean(&axes, &[f64::NEG_INFINITY; 5]), Err(QlaError::DegeneratePosterior));
    }

    #[test]
    fn prior_table_validation_and_interpolation() {
        let dom = ThetaBox::interval(0.0, 1.0).unwrap();
        let good = Prior::Table { grid: vec![0.0, 1.0], density: vec![1.0, 3.0] };
        good.validate(&dom).unwrap();
        assert!((good.log_density(&[0.5]) - 2f64.ln()).abs() < 1e-15);
        let zero = Prior::Table { grid: vec![0.0, 1.0], density: vec![0.0, 3.0] };
        assert!(zero.validate(&dom).is_err());
        let short = Prior::Table { grid: vec![0.2, 1.0], density: vec![1.0, 3.0] };
        assert!(short.validate(&dom).is_err());
    }

    #[test]
    fn bayes_rejects_high_dimension() {
        #[derive(Debug)]
        struct Wide;
        impl crate::model::Volatility for Wide {
            fn dims(&self) -> crate::model::Dims {
                crate::model::Dims { p: 4, d: 1, m: 1, r: 1 }
            }
            fn sigma(&self, _x: &[f64], t: &[f64], out: &mut DMatrix<f64>) {
                out[(0, 0)] = t.iter().sum::<f64>().exp();
            }
        }
        let m = ModelSpec::new(
            "wide",
            ThetaBox::new(vec![-1.0; 4], vec![1.0; 4]).unwrap(),
            crate::model::Drift::Zero,
            vec![0.0],
            std::sync::Arc::new(Wide),
        )
        .unwrap();
        let obs = Observations::new(1.0, 1, 1, vec![0.0, 0.1], vec![0.0, 0.1], Provenance::Constructed).unwrap();
        assert_eq!(
            bayes(&obs, &m, &Prior::Uniform, &BayesOptions::default()).unwrap_err(),
            QlaError::UnsupportedDimension(4)
        );
    }

    #[test]
    fn bayes_then_qmle_composes() {
        let m = builtin("sin-sin").unwrap();
        let obs = sim(&m, 200, 0.0, 5);
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let opts = QmleOptions { multistart: false, ..Default::default() };
        let composed = qmle_with_bayes_init(&obs, &m, &Prior::Uniform, &BayesOptions::default(), &opts).unwrap();
        let b = bayes_with(&q, &Prior::Uniform, &BayesOptions::default()).unwrap();
        let manual = qmle_with(&q, &b.theta_hat, &opts).unwrap();
        assert_eq!(composed.theta_hat, manual.theta_hat);
        assert!(matches!(composed.kind, EstimatorKind::QmleBayesInit { .. }));
    }

    #[test]
    fn qmle_from_grid_argmax_barely_moves() {
        let m = builtin("exp-sin2").unwrap();
        let obs = sim(&m, 200, 1.0, 6);
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let exact = qmle_with(&q, &[0.5], &QmleOptions::default()).unwrap();
        let again = qmle_with(&q, &exact.theta_hat, &QmleOptions::default()).unwrap();
        assert!((again.theta_hat[0] - exact.theta_hat[0]).abs() < 1e-9);
    }

    #[test]
    fn standardize_at_truth_is_zero_and_flags_singular_information() {
        let m = builtin("exp-sin2").unwrap();
        let obs = sim(&m, 200, 1.0, 7);
        let mut r = qmle(&obs, &m, &[0.5], &QmleOptions::default()).unwrap();
        r.theta_hat = vec![1.0];
        let s = standardize(&r, &obs, &m, &[1.0]).unwrap();
        assert_eq!(s.scaled_error, vec![0.0]);
        assert_eq!(s.standardized, vec![0.0]);

        let flat = ModelConfig {
            name: "flat".into(),
            form: Form::Constant { value: 1.0 },
            theta_domain: vec![[-1.0, 1.0]],
            drift: DriftConfig::Zero,
            y0: None,
            analytic_derivatives: true,
        }
        .build()
        .unwrap();
        let obs = sim(&flat, 20, 0.0, 1);
        let r = bayes(&obs, &flat, &Prior::Uniform, &BayesOptions::default()).unwrap();
        assert!(matches!(standardize(&r, &obs, &flat, &[0.0]), Err(QlaError::SingularInformation(_))));
    }

    #[test]
    fn qmle_result_dominates_verification_grid() {
        let m = builtin("sin-sin").unwrap();
        for s in 0..10 {
            let obs = sim(&m, 50, 0.0, 100 + s);
            let q = QuasiLikelihood::new(&obs, &m).unwrap();
            let r = qmle_with(&q, &[0.5], &QmleOptions::default()).unwrap();
            let (lo, hi) = margined_bounds(&m.theta_domain);
            for g in linspace(lo[0], hi[0], MULTISTART_POINTS) {
                assert!(r.objective.unwrap() >= q.value(&[g]).unwrap() - 1e-9);
            }
        }
    }
}
