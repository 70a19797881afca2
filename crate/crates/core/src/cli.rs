//! Command-line front end: `simulate`, `estimate`, `mc-study`, `nondeg`.
//!
//! Exit status is 0 on success, 1 on domain or configuration errors and 2 on
//! usage errors. Every file is written atomically (temporary file in the
//! target directory, then rename).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::estimate::{
    attach_standardization, bayes_with, qmle_from_bayes, qmle_with, BayesOptions, EstimationResult, Prior,
    QmleOptions,
};
use crate::exec::{with_threads, Execution};
use crate::mcstudy::{reps_csv, run_study, summarize, StudyConfig};
use crate::model::{resolve, ModelConfig, ModelSpec};
use crate::nondeg::{
    chi0_report, default_u_grid, h2_tail_curve, pldi_tail, separation_check, supporting_bound_check, ChiOptions,
    McSettings, SupportingFunctionSpec,
};
use crate::numerics::linspace;
use crate::qlik::{Observations, Provenance, QuasiLikelihood};
use crate::simulate::{simulate_path_stream, SamplePath, Scheme, SimConfig, DEFAULT_SUBSTEPS};

#[derive(Debug, Parser)]
#[command(name = "qla", version, about = "Quasi-likelihood analysis for diffusion volatility parameters")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate sample paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Estimate theta from a CSV path or a freshly simulated one.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study described by a JSON config.
    McStudy(McStudyArgs),
    /// Nondegeneracy diagnostics.
    Nondeg(NondegArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Built-in model name or a name defined in --model-config.
    #[arg(long, default_value = "exp-sin2")]
    pub model: String,
    /// JSON file with a model definition or a list of them.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "milstein")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub theta_star: Vec<f64>,
    /// Number of paths; more than one produces long format with a `rep` column.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Qmle,
    Bayes,
    QmleBayesInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// CSV file with columns t, x_1.., y_1..
    #[arg(long, conflicts_with = "simulate", required_unless_present = "simulate")]
    pub data: Option<PathBuf>,
    /// Simulate the data (needs --theta-star).
    #[arg(long, requires = "theta_star")]
    pub simulate: bool,
    #[arg(long, value_enum, default_value = "qmle")]
    pub estimator: EstimatorArg,
    /// Initial value for qmle (defaults to the midpoint of the domain).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init: Option<Vec<f64>>,
    #[arg(long)]
    pub no_multistart: bool,
    /// True value: drives simulation and enables standardization.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub theta_star: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "json")]
    pub out: OutFormat,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write a CSV profile (theta, H_n, Y_n, Y) to this file.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 201)]
    pub profile_points: usize,
    /// Fail (exit 1) when the optimizer does not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct McStudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub dump_reps: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckArg {
    Chi0,
    H2Tail,
    PldiTail,
    Separation,
    SupportBound,
}

#[derive(Debug, Args)]
pub struct NondegArgs {
    #[arg(long, value_enum)]
    pub check: CheckArg,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub theta_star: Option<Vec<f64>>,
    /// Path for chi0 (simulated when omitted).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0])]
    pub r_grid: Vec<f64>,
    /// Half-width of the u-grid for pldi-tail (defaults to sqrt(n) diam(Theta)).
    #[arg(long)]
    pub u_max: Option<f64>,
    #[arg(long, default_value_t = 2001)]
    pub u_points: usize,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0])]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e3, 1e6])]
    pub n_list: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 201)]
    pub nx: usize,
    #[arg(long, default_value_t = 201)]
    pub ntheta: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Worker cap from `QLA_THREADS`.
fn env_threads() -> Option<usize> {
    std::env::var("QLA_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|k| *k > 0)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::McStudy(a) => cmd_mc_study(a),
        Command::Nondeg(a) => cmd_nondeg(a),
    }
}

// ---------------------------------------------------------------------------
// I/O helpers
// ---------------------------------------------------------------------------

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| QlaError::Io(e.to_string()))?;
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| QlaError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelFile {
    One(ModelConfig),
    Many(Vec<ModelConfig>),
}

pub fn load_model(args: &ModelArgs) -> Result<ModelSpec> {
    let custom = match &args.model_config {
        Some(p) => match serde_json::from_str::<ModelFile>(&std::fs::read_to_string(p)?)? {
            ModelFile::One(m) => vec![m],
            ModelFile::Many(v) => v,
        },
        None => Vec::new(),
    };
    resolve(&args.model, &custom)
}

fn path_rows(path: &SamplePath, rep: Option<usize>, out: &mut csv::Writer<Vec<u8>>) -> Result<()> {
    for k in 0..=path.n {
        let mut rec = Vec::with_capacity(2 + path.d + path.m);
        if let Some(r) = rep {
            rec.push(r.to_string());
        }
        rec.push(path.t[k].to_string());
        rec.extend(path.x_at(k).iter().map(|v| v.to_string()));
        rec.extend(path.y_at(k).iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    Ok(())
}

/// CSV rendering of sample paths: `t, x_1..x_d, y_1..y_m`, preceded by a
/// `rep` column when more than one path is written.
pub fn paths_to_csv(paths: &[SamplePath]) -> Result<String> {
    let first = paths.first().ok_or_else(|| QlaError::Config("no paths to write".into()))?;
    let long = paths.len() > 1;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = Vec::new();
    if long {
        header.push("rep".to_string());
    }
    header.push("t".into());
    header.extend((1..=first.d).map(|i| format!("x_{i}")));
    header.extend((1..=first.m).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (r, p) in paths.iter().enumerate() {
        path_rows(p, long.then_some(r), &mut w)?;
    }
    let bytes = w.into_inner().map_err(|e| QlaError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| QlaError::Io(e.to_string()))
}

fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols: Vec<(usize, usize)> = Vec::new();
    for (pos, h) in headers.iter().enumerate() {
        if let Some(rest) = h.trim().strip_prefix(prefix) {
            let i: usize = rest.parse().map_err(|_| QlaError::Format(format!("bad column name '{h}'")))?;
            cols.push((i, pos));
        }
    }
    cols.sort();
    for (k, (i, _)) in cols.iter().enumerate() {
        if *i != k + 1 {
            return Err(QlaError::Format(format!("columns {prefix}1..{prefix}{} are not contiguous", cols.len())));
        }
    }
    Ok(cols.into_iter().map(|(_, pos)| pos).collect())
}

/// Reads one path from CSV with a header `t, x_1.., y_1..` on a strictly
/// increasing, equispaced time grid (relative tolerance 1e-9).
pub fn ingest_csv(path: &Path) -> Result<Observations> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let t_col = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| QlaError::Format("missing column 't'".into()))?;
    let x_cols = indexed_columns(&headers, "x_")?;
    let y_cols = indexed_columns(&headers, "y_")?;
    if y_cols.is_empty() {
        return Err(QlaError::Format("missing columns y_1..".into()));
    }
    if x_cols.is_empty() {
        return Err(QlaError::Format("missing columns x_1..".into()));
    }
    let rep_col = headers.iter().position(|h| h == "rep");
    let (mut t, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut rep_seen: Option<String> = None;
    let parse = |rec: &csv::StringRecord, c: usize| -> Result<f64> {
        rec[c].parse::<f64>().map_err(|_| QlaError::Format(format!("not a number: '{}'", &rec[c])))
    };
    for rec in rdr.records() {
        let rec = rec?;
        if let Some(rc) = rep_col {
            match &rep_seen {
                None => rep_seen = Some(rec[rc].to_string()),
                Some(r) if *r != rec[rc] => {
                    return Err(QlaError::Format("file holds several paths (rep column); split it first".into()))
                }
                _ => {}
            }
        }
        t.push(parse(&rec, t_col)?);
        for c in &x_cols {
            x.push(parse(&rec, *c)?);
        }
        for c in &y_cols {
            y.push(parse(&rec, *c)?);
        }
    }
    if t.len() < 2 {
        return Err(QlaError::Format("need at least two rows".into()));
    }
    let n = t.len() - 1;
    let horizon = t[n] - t[0];
    let h = horizon / n as f64;
    if !(h > 0.0) {
        return Err(QlaError::Grid("time must be strictly increasing".into()));
    }
    for k in 1..=n {
        let dt = t[k] - t[k - 1];
        if !(dt > 0.0) {
            return Err(QlaError::Grid(format!("t decreases at row {k}")));
        }
        if (dt - h).abs() > 1e-9 * h {
            return Err(QlaError::Grid(format!("step {dt} at row {k} differs from {h}")));
        }
    }
    let file = path.display().to_string();
    Observations::new(horizon, x_cols.len(), y_cols.len(), x, y, Provenance::Ingested { file })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn sim_config(a: &SimArgs) -> SimConfig {
    SimConfig::new(a.n, a.horizon).with_scheme(a.scheme).with_substeps(a.substeps)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    if a.replicates == 0 {
        return Err(QlaError::Config("replicates must be at least 1".into()));
    }
    let cfg = sim_config(&a.sim);
    let paths = (0..a.replicates)
        .map(|j| simulate_path_stream(&model, &cfg, &a.theta_star, a.sim.seed, j as u64))
        .collect::<Result<Vec<_>>>()?;
    emit(a.output.as_deref(), &paths_to_csv(&paths)?)
}

/// JSON document written by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub schema: u32,
    pub model: String,
    pub n: usize,
    pub horizon: f64,
    pub provenance: Provenance,
    pub theta_star: Option<Vec<f64>>,
    pub result: EstimationResult,
}

fn estimate_csv(out: &EstimateOutput) -> String {
    let p = out.result.theta_hat.len();
    let mut header = vec!["estimator".to_string(), "n".into()];
    header.extend((1..=p).map(|i| format!("theta_hat_{i}")));
    header.extend((1..=p).map(|i| format!("std_error_{i}")));
    header.extend((1..=p).map(|i| format!("standardized_{i}")));
    header.push("objective".into());
    header.push("converged".into());
    let kind = match &out.result.kind {
        crate::estimate::EstimatorKind::Qmle { .. } => "qmle",
        crate::estimate::EstimatorKind::Bayes { .. } => "bayes",
        crate::estimate::EstimatorKind::QmleBayesInit { .. } => "qmle-bayes-init",
    };
    let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
    let mut row = vec![kind.to_string(), out.n.to_string()];
    row.extend(out.result.theta_hat.iter().map(|v| v.to_string()));
    row.extend((0..p).map(|i| opt(&out.result.std_error, i)));
    row.extend((0..p).map(|i| opt(&out.result.standardized, i)));
    row.push(out.result.objective.map(|v| v.to_string()).unwrap_or_default());
    row.push(out.result.converged.to_string());
    format!("{}\n{}\n", header.join(","), row.join(","))
}

fn profile_csv(obs: &Observations, model: &ModelSpec, theta_star: Option<&[f64]>, points: usize) -> Result<String> {
    if model.p() != 1 {
        return Err(QlaError::Config("profiles are available for one-dimensional parameters only".into()));
    }
    let q = QuasiLikelihood::new(obs, model)?;
    let h_star = match theta_star {
        Some(ts) => Some(q.value(ts)?),
        None => None,
    };
    let mut s = String::from("theta,h_n,y_n,y\n");
    for t in linspace(model.theta_domain.lo()[0], model.theta_domain.hi()[0], points) {
        let v = q.value(&[t])?;
        let (yn, y) = match (theta_star, h_star) {
            (Some(ts), Some(hs)) => (
                ((v - hs) / obs.n as f64).to_string(),
                (-0.5 * q.mean_divergence(&[t], ts)?).to_string(),
            ),
            _ => (String::new(), String::new()),
        };
        s.push_str(&format!("{t},{v},{yn},{y}\n"));
    }
    Ok(s)
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let obs = match &a.data {
        Some(p) => ingest_csv(p)?,
        None => {
            let ts = a.theta_star.as_deref().expect("clap enforces --theta-star with --simulate");
            Observations::from_path(&simulate_path_stream(&model, &sim_config(&a.sim), ts, a.sim.seed, 0)?)
        }
    };
    let q = QuasiLikelihood::new(&obs, &model)?;
    let qopts = QmleOptions { multistart: !a.no_multistart, ..Default::default() };
    let mut result = match a.estimator {
        EstimatorArg::Qmle => {
            let init = a.init.clone().unwrap_or_else(|| model.theta_domain.midpoint());
            qmle_with(&q, &init, &qopts)?
        }
        EstimatorArg::Bayes => bayes_with(&q, &Prior::Uniform, &BayesOptions::default())?,
        EstimatorArg::QmleBayesInit => {
            let b = bayes_with(&q, &Prior::Uniform, &BayesOptions::default())?;
            let mut r = qmle_from_bayes(&q, &b, &qopts)?;
            r.evals += b.evals;
            r
        }
    };
    if a.strict && !result.converged {
        return Err(QlaError::NoConvergence { iterations: qopts.newton.max_iter });
    }
    if let Some(ts) = &a.theta_star {
        attach_standardization(&mut result, &obs, &model, ts)?;
    }
    if let Some(p) = &a.profile {
        write_atomic(p, profile_csv(&obs, &model, a.theta_star.as_deref(), a.profile_points)?.as_bytes())?;
    }
    let out = EstimateOutput {
        schema: 1,
        model: model.name.clone(),
        n: obs.n,
        horizon: obs.horizon,
        provenance: obs.provenance.clone(),
        theta_star: a.theta_star.clone(),
        result,
    };
    let text = match a.out {
        OutFormat::Json => to_json(&out)?,
        OutFormat::Csv => estimate_csv(&out),
    };
    emit(a.output.as_deref(), &text)
}

fn cmd_mc_study(a: McStudyArgs) -> Result<()> {
    let mut cfg = StudyConfig::from_json(&std::fs::read_to_string(&a.config)?)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.dump_reps {
        cfg.dump_reps = true;
    }
    if a.sequential {
        cfg.execution = Execution::Sequential;
    }
    if cfg.threads.is_none() {
        cfg.threads = env_threads();
    }
    let dir = a
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let report = run_study(&cfg)?;
    let table = summarize(&report);
    write_atomic(&dir.join("report.json"), to_json(&report)?.as_bytes())?;
    write_atomic(&dir.join("table.csv"), table.csv.as_bytes())?;
    if cfg.dump_reps {
        write_atomic(&dir.join("reps.csv"), reps_csv(&report)?.as_bytes())?;
    }
    for c in &report.cells {
        if c.failure_count > 0 {
            log::warn!("{} at n = {}: {} of {} replicates failed", c.estimator, c.n, c.failure_count, cfg.replicates);
        }
    }
    print!("{}", table.text);
    Ok(())
}

fn cmd_nondeg(a: NondegArgs) -> Result<()> {
    let threads = env_threads();
    let json = match a.check {
        CheckArg::Separation => {
            to_json(&separation_check(a.degree, &a.alphas, a.delta, a.eps, &a.n_list, a.samples, a.sim.seed)?)?
        }
        CheckArg::SupportBound => {
            let spec = SupportingFunctionSpec::builtin(&a.model.model)?;
            let ts = a.theta_star.as_ref().map(|v| v[0]).unwrap_or(if spec.name == "power" { 0.25 } else { 0.0 });
            to_json(&supporting_bound_check(&spec, ts, a.nx, a.ntheta)?)?
        }
        check => {
            let model = load_model(&a.model)?;
            let ts = a
                .theta_star
                .clone()
                .ok_or_else(|| QlaError::Config("--theta-star is required for this check".into()))?;
            let mc = McSettings {
                scheme: a.sim.scheme,
                substeps: a.sim.substeps,
                ..McSettings::new(a.sim.n, a.sim.horizon, a.replicates, a.sim.seed)
            };
            match check {
                CheckArg::Chi0 => {
                    let obs = match &a.data {
                        Some(p) => ingest_csv(p)?,
                        None => {
                            Observations::from_path(&simulate_path_stream(&model, &sim_config(&a.sim), &ts, a.sim.seed, 0)?)
                        }
                    };
                    to_json(&chi0_report(&obs, &model, &ts, &ChiOptions::default())?)?
                }
                CheckArg::H2Tail => to_json(&with_threads(threads, || {
                    h2_tail_curve(&model, &ts, &a.r_grid, &mc, &ChiOptions::default())
                })?)?,
                CheckArg::PldiTail => {
                    let u_max = a.u_max.unwrap_or((a.sim.n as f64).sqrt() * model.theta_domain.diameter());
                    let grid = default_u_grid(u_max, a.u_points, &a.r_grid);
                    to_json(&with_threads(threads, || pldi_tail(&model, &ts, &a.r_grid, &grid, &mc))?)?
                }
                _ => unreachable!(),
            }
        }
    };
    emit(a.output.as_deref(), &json)
}
