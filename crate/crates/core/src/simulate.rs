//! Sample-path generation on a uniform observation grid.
//!
//! Paths are simulated on a fine grid of `n * substeps` steps and then
//! subsampled. Randomness comes from counter-addressed ChaCha streams so a
//! replicate's path depends only on `(seed, stream)`, never on scheduling.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::model::ModelSpec;

/// States above this magnitude are treated as a numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e12;

pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    #[default]
    Milstein,
}

impl std::str::FromStr for Scheme {
    type Err = QlaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" | "euler-maruyama" => Ok(Scheme::Euler),
            "milstein" => Ok(Scheme::Milstein),
            other => Err(QlaError::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Milstein => "milstein",
        })
    }
}

/// Reproducible stream of standard normal draws.
///
/// Stream `j` of seed `s` is ChaCha8 keyed by `s` with stream id `j`, so
/// distinct replicates never share draws and each is addressable directly.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl Iterator for GaussianStream {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        Some(self.next_normal())
    }
}

pub fn gaussian_stream(seed: u64, stream: u64) -> GaussianStream {
    GaussianStream::new(seed, stream)
}

/// Grid and scheme settings for one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub horizon: f64,
    pub scheme: Scheme,
    pub substeps: usize,
}

impl SimConfig {
    pub fn new(n: usize, horizon: f64) -> Self {
        Self { n, horizon, scheme: Scheme::Milstein, substeps: DEFAULT_SUBSTEPS }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }
}

/// One simulated trajectory observed at `t_k = k T / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: usize,
    pub horizon: f64,
    pub t: Vec<f64>,
    /// Covariate, row-major `(n + 1) x d`.
    pub x: Vec<f64>,
    /// Observed process, row-major `(n + 1) x m`.
    pub y: Vec<f64>,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub stream: u64,
    pub scheme: Scheme,
    pub substeps: usize,
}

/// Simulates a path on stream 0 of `seed`.
pub fn simulate_path(
    model: &ModelSpec,
    cfg: &SimConfig,
    theta_star: &[f64],
    seed: u64,
) -> Result<SamplePath> {
    simulate_path_stream(model, cfg, theta_star, seed, 0)
}

pub fn simulate_path_stream(
    model: &ModelSpec,
    cfg: &SimConfig,
    theta_star: &[f64],
    seed: u64,
    stream: u64,
) -> Result<SamplePath> {
    if cfg.n == 0 {
        return Err(QlaError::Config("n must be at least 1".into()));
    }
    if cfg.substeps == 0 {
        return Err(QlaError::Config("substeps must be at least 1".into()));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(QlaError::Config("horizon must be positive".into()));
    }
    if !model.theta_domain.contains_open(theta_star) && !model.theta_domain.contains_closed(theta_star) {
        return Err(QlaError::Domain {
            theta: theta_star.to_vec(),
            what: "the parameter box".into(),
        });
    }
    let dims = model.dims;
    if dims.d != dims.m {
        return Err(QlaError::Config(
            "built-in simulation requires X = Y (d = m); supply observations directly otherwise".into(),
        ));
    }
    let vol = model.volatility();
    let milstein = cfg.scheme == Scheme::Milstein;
    if milstein && (dims.m != 1 || dims.r != 1) {
        return Err(QlaError::UnsupportedScheme(format!(
            "milstein needs d = m = r = 1, model has m = {}, r = {}",
            dims.m, dims.r
        )));
    }

    let m = dims.m;
    let fine = cfg.n * cfg.substeps;
    let dt = cfg.horizon / fine as f64;
    let sqdt = dt.sqrt();
    let mut normals = GaussianStream::new(seed, stream);

    let mut t = Vec::with_capacity(cfg.n + 1);
    let mut y = Vec::with_capacity((cfg.n + 1) * m);
    let mut state = model.y0.clone();
    let mut drift = vec![0.0; m];
    let mut dw = vec![0.0; dims.r];
    let mut sig = DMatrix::zeros(m, dims.r);

    t.push(0.0);
    y.extend_from_slice(&state);
    for step in 0..fine {
        let time = step as f64 * dt;
        model.drift.eval(time, &state, &mut drift);
        vol.sigma(&state, theta_star, &mut sig);
        dw.iter_mut().for_each(|w| *w = sqdt * normals.next_normal());
        if milstein {
            let s = sig[(0, 0)];
            let ds = vol.dsigma_dx(state[0], theta_star).unwrap_or_else(|| {
                let h = 1e-6 * state[0].abs().max(1.0);
                let mut b = DMatrix::zeros(1, 1);
                vol.sigma(&[state[0] + h], theta_star, &mut b);
                let up = b[(0, 0)];
                vol.sigma(&[state[0] - h], theta_star, &mut b);
                (up - b[(0, 0)]) / (2.0 * h)
            });
            state[0] += drift[0] * dt + s * dw[0] + 0.5 * s * ds * (dw[0] * dw[0] - dt);
        } else {
            for i in 0..m {
                let mut noise = 0.0;
                for (j, w) in dw.iter().enumerate() {
                    noise += sig[(i, j)] * w;
                }
                state[i] += drift[i] * dt + noise;
            }
        }
        if let Some(v) = state.iter().find(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
            return Err(QlaError::NumericBlowup { step: step + 1, value: *v });
        }
        if (step + 1) % cfg.substeps == 0 {
            let k = (step + 1) / cfg.substeps;
            t.push(k as f64 * cfg.horizon / cfg.n as f64);
            y.extend_from_slice(&state);
        }
    }

    Ok(SamplePath {
        n: cfg.n,
        horizon: cfg.horizon,
        t,
        x: y.clone(),
        y,
        d: dims.d,
        m,
        seed,
        stream,
        scheme: cfg.scheme,
        substeps: cfg.substeps,
    })
}

impl SamplePath {
    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.m..(k + 1) * self.m]
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.d..(k + 1) * self.d]
    }
}
