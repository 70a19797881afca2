//! Monte Carlo studies: replicate paths over a list of step sizes, run every
//! configured estimator on each common path, aggregate moments.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::estimate::{bayes_with, qmle_from_bayes, qmle_with, BayesOptions, EstimationResult, Prior, QmleOptions};
use crate::exec::{map_indexed, with_threads, Execution};
use crate::model::{resolve, ModelConfig, ModelSpec};
use crate::numerics::pairwise_sum;
use crate::qlik::{Observations, QuasiLikelihood};
use crate::simulate::{simulate_path_stream, Scheme, SimConfig, DEFAULT_SUBSTEPS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Qmle {
        init: Vec<f64>,
        #[serde(default = "yes")]
        multistart: bool,
    },
    Bayes {
        #[serde(default)]
        prior: Prior,
        #[serde(default)]
        points: Option<usize>,
    },
    QmleBayesInit {
        #[serde(default)]
        prior: Prior,
        #[serde(default)]
        points: Option<usize>,
        #[serde(default = "yes")]
        multistart: bool,
    },
}

fn yes() -> bool {
    true
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl EstimatorSpec {
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Qmle { init, multistart } => {
                format!("qmle({}){}", fmt_vec(init), if *multistart { "" } else { "-local" })
            }
            EstimatorSpec::Bayes { .. } => "bayes".into(),
            EstimatorSpec::QmleBayesInit { multistart, .. } => {
                format!("qmle-bayes-init{}", if *multistart { "" } else { "-local" })
            }
        }
    }

    fn bayes_key(&self) -> Option<(&Prior, Option<usize>)> {
        match self {
            EstimatorSpec::Bayes { prior, points } | EstimatorSpec::QmleBayesInit { prior, points, .. } => {
                Some((prior, *points))
            }
            EstimatorSpec::Qmle { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema: u32,
    pub model: String,
    /// User-defined models, looked up by name before the built-ins.
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    pub theta_star: Vec<f64>,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default)]
    pub h_list: Option<Vec<f64>>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    pub replicates: usize,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub execution: Execution,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub dump_reps: bool,
}

fn unit() -> f64 {
    1.0
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

fn default_scheme() -> Scheme {
    Scheme::Milstein
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| QlaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sample sizes `n = T / h`, checked to be integral.
    pub fn sample_sizes(&self) -> Result<Vec<usize>> {
        match (&self.h_list, &self.n_list) {
            (Some(_), Some(_)) => Err(QlaError::Config("give either h_list or n_list, not both".into())),
            (None, None) => Err(QlaError::Config("one of h_list or n_list is required".into())),
            (None, Some(ns)) => {
                if ns.contains(&0) {
                    return Err(QlaError::Config("n must be positive".into()));
                }
                Ok(ns.clone())
            }
            (Some(hs), None) => hs
                .iter()
                .map(|h| {
                    let n = (self.horizon / h).round();
                    if !(h > &0.0) || n < 1.0 || (n * h - self.horizon).abs() > 1e-9 * self.horizon {
                        Err(QlaError::Config(format!("h = {h} does not divide T = {}", self.horizon)))
                    } else {
                        Ok(n as usize)
                    }
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(QlaError::Config(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.replicates == 0 {
            return Err(QlaError::Config("replicates must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(QlaError::Config("no estimators configured".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(QlaError::Config("horizon must be positive".into()));
        }
        self.sample_sizes()?;
        let model = self.resolve_model()?;
        model.theta_domain.check_closed(&self.theta_star)?;
        for e in &self.estimators {
            match e {
                EstimatorSpec::Qmle { init, .. } => model.theta_domain.check_closed(init)?,
                EstimatorSpec::Bayes { prior, .. } | EstimatorSpec::QmleBayesInit { prior, .. } => {
                    prior.validate(&model.theta_domain)?
                }
            }
        }
        Ok(())
    }

    pub fn resolve_model(&self) -> Result<ModelSpec> {
        resolve(&self.model, &self.models)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub h: f64,
    pub n: usize,
    pub estimator: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub mc_standard_error: Vec<f64>,
    pub failure_count: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub h: f64,
    pub n: usize,
    pub estimator: String,
    /// Empty when the estimator failed on this replicate.
    pub theta_hat: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema: u32,
    pub config: StudyConfig,
    pub seed: u64,
    pub p: usize,
    pub cells: Vec<McCell>,
    #[serde(skip)]
    pub reps: Vec<RepRecord>,
}

/// Random stream of replicate `j` at step-size index `i`.
pub fn replicate_stream(h_index: usize, rep: usize) -> u64 {
    ((h_index as u64) << 32) | rep as u64
}

type Outcome = Option<(Vec<f64>, bool)>;

fn run_estimators(obs: &Observations, model: &ModelSpec, specs: &[EstimatorSpec]) -> Vec<Outcome> {
    let q = match QuasiLikelihood::new(obs, model) {
        Ok(q) => q,
        Err(e) => {
            log::debug!("replicate skipped: {e}");
            return vec![None; specs.len()];
        }
    };
    let mut bayes_cache: Vec<((Prior, Option<usize>), Option<EstimationResult>)> = Vec::new();
    let mut bayes_for = |prior: &Prior, points: Option<usize>| -> Option<EstimationResult> {
        if let Some((_, r)) = bayes_cache.iter().find(|(k, _)| k.0 == *prior && k.1 == points) {
            return r.clone();
        }
        let r = bayes_with(&q, prior, &BayesOptions { points, refine: true })
            .map_err(|e| log::debug!("bayes failed: {e}"))
            .ok();
        bayes_cache.push(((prior.clone(), points), r.clone()));
        r
    };
    specs
        .iter()
        .map(|spec| {
            let r = match spec {
                EstimatorSpec::Qmle { init, multistart } => {
                    qmle_with(&q, init, &QmleOptions { multistart: *multistart, ..Default::default() })
                        .map_err(|e| log::debug!("qmle failed: {e}"))
                        .ok()
                }
                EstimatorSpec::Bayes { .. } => {
                    let (prior, points) = spec.bayes_key().expect("bayes spec");
                    bayes_for(prior, points)
                }
                EstimatorSpec::QmleBayesInit { multistart, .. } => {
                    let (prior, points) = spec.bayes_key().expect("bayes spec");
                    bayes_for(prior, points).and_then(|b| {
                        qmle_from_bayes(&q, &b, &QmleOptions { multistart: *multistart, ..Default::default() })
                            .map_err(|e| log::debug!("qmle from bayes failed: {e}"))
                            .ok()
                    })
                }
            };
            r.map(|r| (r.theta_hat, r.converged))
        })
        .collect()
}

/// Runs the study. Replicate `j` at step-size index `i` simulates one path on
/// stream [`replicate_stream`]`(i, j)` of `cfg.seed`, and every estimator sees
/// that same path. Failed or non-converged estimates are counted and
/// excluded from the moments.
pub fn run_study(cfg: &StudyConfig) -> Result<McReport> {
    cfg.validate()?;
    let model = cfg.resolve_model()?;
    let p = model.p();
    let ns = cfg.sample_sizes()?;
    let labels: Vec<String> = cfg.estimators.iter().map(|e| e.label()).collect();
    let mut cells = Vec::new();
    let mut reps = Vec::new();
    for (hi, &n) in ns.iter().enumerate() {
        let h = cfg.horizon / n as f64;
        let sim = SimConfig::new(n, cfg.horizon).with_scheme(cfg.scheme).with_substeps(cfg.substeps);
        let outcomes: Vec<Vec<Outcome>> = with_threads(cfg.threads, || {
            map_indexed(cfg.execution, cfg.replicates, |j| {
                match simulate_path_stream(&model, &sim, &cfg.theta_star, cfg.seed, replicate_stream(hi, j)) {
                    Ok(path) => run_estimators(&Observations::from_path(&path), &model, &cfg.estimators),
                    Err(e) => {
                        log::debug!("simulation failed for replicate {j}: {e}");
                        vec![None; cfg.estimators.len()]
                    }
                }
            })
        });
        for (ei, label) in labels.iter().enumerate() {
            let good: Vec<&Vec<f64>> = outcomes
                .iter()
                .filter_map(|o| o[ei].as_ref().filter(|(_, c)| *c).map(|(t, _)| t))
                .collect();
            let count = good.len();
            let (mut mean, mut sd, mut se) = (vec![f64::NAN; p], vec![f64::NAN; p], vec![f64::NAN; p]);
            for i in 0..p {
                let xs: Vec<f64> = good.iter().map(|t| t[i]).collect();
                if count > 0 {
                    let (m, s) = crate::stats::mean_sd(&xs);
                    mean[i] = m;
                    sd[i] = s;
                    se[i] = s / (count as f64).sqrt();
                }
            }
            cells.push(McCell {
                h,
                n,
                estimator: label.clone(),
                mean,
                sd,
                mc_standard_error: se,
                failure_count: cfg.replicates - count,
                count,
            });
            if cfg.dump_reps {
                for (j, o) in outcomes.iter().enumerate() {
                    let (theta_hat, converged) = o[ei].clone().unwrap_or((Vec::new(), false));
                    reps.push(RepRecord { rep: j, h, n, estimator: label.clone(), theta_hat, converged });
                }
            }
        }
    }
    Ok(McReport { schema: SCHEMA_VERSION, config: cfg.clone(), seed: cfg.seed, p, cells, reps })
}

/// Mean of a column of per-replicate values, computed the same way as the
/// report so dumps can be checked against it.
pub fn recompute_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub text: String,
    pub csv: String,
}

fn h_label(h: f64, horizon: f64) -> String {
    let n = (horizon / h).round();
    if horizon == 1.0 {
        format!("1/{n}")
    } else {
        format!("{h}")
    }
}

/// Renders the report as rows of step sizes with mean / s.d. column pairs
/// per estimator (one pair per parameter component when `p > 1`).
pub fn summarize(report: &McReport) -> Table {
    let mut estimators: Vec<String> = Vec::new();
    let mut hs: Vec<(f64, usize)> = Vec::new();
    for c in &report.cells {
        if !estimators.contains(&c.estimator) {
            estimators.push(c.estimator.clone());
        }
        if !hs.iter().any(|(_, n)| *n == c.n) {
            hs.push((c.h, c.n));
        }
    }
    let p = report.p;
    let suffix = |i: usize| if p > 1 { format!("[{}]", i + 1) } else { String::new() };
    let mut header = vec!["h".to_string()];
    let mut csv_header = vec!["h".to_string()];
    for e in &estimators {
        for i in 0..p {
            header.push(format!("{e}{} mean", suffix(i)));
            header.push(format!("{e}{} s.d.", suffix(i)));
            csv_header.push(format!("{e}{}_mean", suffix(i)));
            csv_header.push(format!("{e}{}_sd", suffix(i)));
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (h, n) in &hs {
        let mut row = vec![h_label(*h, report.config.horizon)];
        for e in &estimators {
            let cell = report.cells.iter().find(|c| c.n == *n && &c.estimator == e);
            for i in 0..p {
                match cell {
                    Some(c) => {
                        row.push(format!("{:.5}", c.mean[i]));
                        row.push(format!("{:.5}", c.sd[i]));
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|k| rows.iter().map(|r| r[k].len()).chain([header[k].len()]).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    let line = |cols: &[String]| -> String {
        cols.iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(text, "{}", line(&header));
    for r in &rows {
        let _ = writeln!(text, "{}", line(r));
    }
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", csv_header.join(","));
    for r in &rows {
        let _ = writeln!(csv, "{}", r.join(","));
    }
    Table { text, csv }
}

/// Per-replicate dump as CSV: `rep,h,estimator,theta_hat_1..p,converged`.
pub fn reps_csv(report: &McReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rep".to_string(), "h".into(), "estimator".into()];
    header.extend((1..=report.p).map(|i| format!("theta_hat_{i}")));
    header.push("converged".into());
    w.write_record(&header)?;
    for r in &report.reps {
        let mut rec = vec![r.rep.to_string(), format!("{:e}", r.h), r.estimator.clone()];
        for i in 0..report.p {
            rec.push(r.theta_hat.get(i).map(|v| format!("{v:e}")).unwrap_or_default());
        }
        rec.push(r.converged.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| QlaError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| QlaError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(reps: usize) -> StudyConfig {
        StudyConfig::from_json(&format!(
            r#"{{
                "schema": 1,
                "model": "exp-sin2",
                "theta_star": [1.0],
                "h_list": [0.02],
                "replicates": {reps},
                "estimators": [
                    {{"kind": "qmle", "init": [0.5], "multistart": false}},
                    {{"kind": "bayes"}},
                    {{"kind": "qmle-bayes-init", "multistart": false}}
                ],
                "seed": 11,
                "dump_reps": true
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_replicate_has_zero_sd() {
        let r = run_study(&config(1)).unwrap();
        for c in &r.cells {
            assert_eq!(c.count + c.failure_count, 1);
            if c.count == 1 {
                assert_eq!(c.sd, vec![0.0]);
                let rep = r.reps.iter().find(|x| x.estimator == c.estimator).unwrap();
                assert_eq!(c.mean, rep.theta_hat);
            }
        }
    }

    #[test]
    fn moments_match_dump() {
        let r = run_study(&config(20)).unwrap();
        for c in &r.cells {
            let xs: Vec<f64> = r
                .reps
                .iter()
                .filter(|x| x.estimator == c.estimator && x.converged)
                .map(|x| x.theta_hat[0])
                .collect();
            assert_eq!(xs.len(), c.count);
            assert!((recompute_mean(&xs) - c.mean[0]).abs() < 1e-12);
            let (_, sd) = crate::stats::mean_sd(&xs);
            assert!((sd - c.sd[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut a = config(12);
        a.execution = Execution::Sequential;
        let mut b = a.clone();
        b.execution = Execution::Parallel;
        b.threads = Some(3);
        let (ra, rb) = (run_study(&a).unwrap(), run_study(&b).unwrap());
        assert_eq!(ra.cells, rb.cells);
        assert_eq!(ra.reps, rb.reps);
    }

    #[test]
    fn config_validation() {
        let mut c = config(1);
        c.h_list = Some(vec![0.3]);
        assert!(matches!(c.validate(), Err(QlaError::Config(_))));
        let mut c = config(1);
        c.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = config(1);
        c.schema = 2;
        assert!(c.validate().is_err());
        let mut c = config(1);
        c.n_list = Some(vec![50]);
        assert!(c.validate().is_err());
        assert!(StudyConfig::from_json(r#"{"schema": 1, "bogus": 3}"#).is_err());
    }

    #[test]
    fn summary_layouts() {
        let mut r = run_study(&config(2)).unwrap();
        let t = summarize(&r);
        assert_eq!(t.csv.lines().count(), 2);
        assert!(t.csv.starts_with("h,qmle(0.5)-local_mean,qmle(0.5)-local_sd,bayes_mean,bayes_sd,"));
        assert!(t.text.lines().nth(1).unwrap().starts_with("1/50"));
        r.cells.clear();
        let t = summarize(&r);
        assert_eq!(t.csv, "h\n");
        assert_eq!(t.text.lines().count(), 1);
    }
}
