#![allow(clippy::type_complexity)]

//! Acceptance suite. Runs as a plain binary (no libtest harness) so that one
//! PASS/FAIL line per criterion is always printed; exits non-zero if any
//! criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use qla::estimate::{bayes_with, qmle_with, standardize, BayesOptions, Prior, QmleOptions};
use qla::exec::{map_indexed, Execution};
use qla::mcstudy::{run_study, McReport, StudyConfig};
use qla::model::{builtin, BUILTIN_NAMES};
use qla::nondeg::{
    chi0_report, default_u_grid, h2_tail_curve, pldi_tail, q_divergence, separation_check, supporting_bound_check,
    ChiOptions, McSettings, SupportingFunctionSpec,
};
use qla::numerics::linspace;
use qla::qlik::{log_z_field, y_limit, Observations, QuasiLikelihood};
use qla::simulate::{simulate_path_stream, SimConfig};
use qla::stats::{ks_test, normal_cdf, raw_moment};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn path(model: &qla::ModelSpec, n: usize, theta: &[f64], seed: u64, stream: u64) -> Observations {
    let p = simulate_path_stream(model, &SimConfig::new(n, 1.0), theta, seed, stream).expect("simulation");
    Observations::from_path(&p)
}

fn table_config(model: &str, theta_star: f64, seed: u64) -> StudyConfig {
    StudyConfig::from_json(&format!(
        r#"{{
            "schema": 1,
            "model": "{model}",
            "theta_star": [{theta_star}],
            "h_list": [0.02, 0.004, 0.002],
            "replicates": 1000,
            "estimators": [
                {{"kind": "qmle", "init": [0.5], "multistart": false}},
                {{"kind": "bayes", "prior": {{"kind": "uniform"}}}},
                {{"kind": "qmle-bayes-init", "prior": {{"kind": "uniform"}}, "multistart": false}}
            ],
            "seed": {seed}
        }}"#
    ))
    .expect("valid config")
}

fn cell(r: &McReport, n: usize, idx: usize) -> &qla::mcstudy::McCell {
    let label = &r.config.estimators[idx].label();
    r.cells.iter().find(|c| c.n == n && &c.estimator == label).expect("cell")
}

/// Reference (mean, s.d.) per h in {1/50, 1/250, 1/500} for the three
/// estimator columns: QMLE(0.5), Bayes, QMLE from the Bayes value.
const TABLE1: [[(f64, f64); 3]; 3] = [
    [(0.89850, 0.55160), (0.96473, 0.48914), (0.89850, 0.55160)],
    [(0.97816, 0.23723), (0.99392, 0.23112), (0.97816, 0.23723)],
    [(0.99145, 0.16041), (0.99969, 0.15874), (0.99145, 0.16041)],
];
const TABLE2: [[(f64, f64); 3]; 3] = [
    [(0.07702, 0.39184), (0.00363, 0.43532), (0.00757, 0.52096)],
    [(0.05046, 0.23677), (0.00317, 0.26283), (0.00502, 0.28079)],
    [(0.04230, 0.20471), (0.00071, 0.16614), (-0.00035, 0.17814)],
];
const NS: [usize; 3] = [50, 250, 500];

fn criterion_1() -> Outcome {
    let r = run_study(&table_config("exp-sin2", 1.0, 20240501)).expect("study");
    let mut pass = true;
    let mut worst = String::new();
    let mut worst_z = 0.0f64;
    for (hi, n) in NS.iter().enumerate() {
        for (e, &(pm, psd)) in TABLE1[hi].iter().enumerate() {
            let c = cell(&r, *n, e);
            let tol = 4.0 * psd / 1000f64.sqrt() + 0.01;
            let mean_ok = (c.mean[0] - pm).abs() <= tol;
            let sd_ok = (c.sd[0] - psd).abs() <= 0.2 * psd;
            pass &= mean_ok && sd_ok && c.failure_count == 0;
            let z = ((c.mean[0] - pm).abs() / tol).max((c.sd[0] - psd).abs() / (0.2 * psd));
            if z > worst_z {
                worst_z = z;
                worst = format!(
                    "{} n={n}: mean {:.5} vs {pm}, sd {:.5} vs {psd}",
                    c.estimator, c.mean[0], c.sd[0]
                );
            }
        }
    }
    let b500 = cell(&r, 500, 1);
    outcome(
        pass,
        format!(
            "exp-sin2 1000 reps; Bayes h=1/500 {:.5}/{:.5}; tightest cell ({:.0}% of tolerance): {worst}",
            b500.mean[0],
            b500.sd[0],
            100.0 * worst_z
        ),
    )
}

fn criterion_2() -> Outcome {
    let r = run_study(&table_config("sin-sin", 0.0, 20240502)).expect("study");
    let mut pass = true;
    let mut parts = Vec::new();
    for n in NS {
        let q = cell(&r, n, 0);
        let b = cell(&r, n, 1);
        pass &= q.mean[0] > 0.03 && b.mean[0].abs() <= 0.03;
        parts.push(format!("n={n}: qmle(0.5) {:.4}, bayes {:.4}", q.mean[0], b.mean[0]));
    }
    // reference values for the same columns, reported for context
    let ref_cols: Vec<String> = (0..3).map(|h| format!("{:.5}/{:.5}", TABLE2[h][0].0, TABLE2[h][1].0)).collect();
    outcome(pass, format!("{} (reference {})", parts.join("; "), ref_cols.join(", ")))
}

fn criterion_3() -> Outcome {
    let m = builtin("exp-sin2").unwrap();
    let rows: Vec<(f64, f64)> = map_indexed(Execution::Parallel, 1000, |j| {
        let obs = path(&m, 500, &[1.0], 3003, j as u64);
        let q = QuasiLikelihood::new(&obs, &m).unwrap();
        let a = qmle_with(&q, &[0.5], &QmleOptions::default()).unwrap();
        let b = bayes_with(&q, &Prior::Uniform, &BayesOptions::default()).unwrap();
        (
            standardize(&a, &obs, &m, &[1.0]).unwrap().standardized[0],
            standardize(&b, &obs, &m, &[1.0]).unwrap().standardized[0],
        )
    });
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, xs) in [("qmle", rows.iter().map(|r| r.0).collect::<Vec<_>>()), ("bayes", rows.iter().map(|r| r.1).collect())] {
        let ks = ks_test(&xs, normal_cdf);
        let m2 = raw_moment(&xs, 2);
        let m4 = raw_moment(&xs, 4);
        pass &= ks.p_value > 0.01 && (m2 - 1.0).abs() <= 0.15 && (m4 - 3.0).abs() <= 0.25 * 3.0;
        parts.push(format!("{name}: KS p={:.3}, E[z^2]={m2:.3}, E[z^4]={m4:.3}", ks.p_value));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    // qmle against a two-level brute-force grid (10^5 points over Theta, then
    // 10^4 points on the +-1 cell bracket)
    let ss = builtin("sin-sin").unwrap();
    let qmle_err: Vec<f64> = map_indexed(Execution::Parallel, 100, |j| {
        let obs = path(&ss, 100, &[0.3], 4004, j as u64);
        let q = QuasiLikelihood::new(&obs, &ss).unwrap();
        let r = qmle_with(&q, &[0.5], &QmleOptions::default()).unwrap();
        let argmax = |lo: f64, hi: f64, k: usize| {
            linspace(lo, hi, k)
                .into_iter()
                .map(|t| (t, q.value(&[t]).unwrap()))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
                .0
        };
        let coarse = argmax(-PI, PI, 100_000);
        let cell = 2.0 * PI / 99_999.0;
        let fine = argmax((coarse - cell).max(-PI), (coarse + cell).min(PI), 10_001);
        (r.theta_hat[0] - fine).abs()
    });
    // bayes against a 10^6-point trapezoid rule
    let es = builtin("exp-sin2").unwrap();
    let bayes_err: Vec<f64> = map_indexed(Execution::Parallel, 100, |j| {
        let obs = path(&es, 50, &[1.0], 4005, j as u64);
        let q = QuasiLikelihood::new(&obs, &es).unwrap();
        let r = bayes_with(&q, &Prior::Uniform, &BayesOptions::default()).unwrap();
        let grid = linspace(-PI, PI, 1_000_000);
        let vals: Vec<f64> = grid.iter().map(|t| q.value(&[*t]).unwrap()).collect();
        let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1) = (0.0, 0.0);
        for (i, (t, v)) in grid.iter().zip(&vals).enumerate() {
            let w = (v - mx).exp() * if i == 0 || i + 1 == grid.len() { 0.5 } else { 1.0 };
            z += w;
            m1 += w * t;
        }
        (r.theta_hat[0] - m1 / z).abs()
    });
    // chi0 against a 10^5-point grid infimum
    let chi: Vec<(f64, bool)> = map_indexed(Execution::Parallel, 100, |j| {
        let obs = path(&es, 100, &[1.0], 4006, j as u64);
        let q = QuasiLikelihood::new(&obs, &es).unwrap();
        let c = chi0_report(&obs, &es, &[1.0], &ChiOptions::default()).unwrap().value;
        let mut dense = f64::INFINITY;
        for t in linspace(-PI, PI, 100_000) {
            if t != 1.0 {
                dense = dense.min(0.5 * q.mean_divergence(&[t], &[1.0]).unwrap() / (t - 1.0).powi(2));
            }
        }
        ((dense - c).abs() / dense, dense >= c - 1e-6)
    });
    let mq = qmle_err.iter().copied().fold(0.0, f64::max);
    let mb = bayes_err.iter().copied().fold(0.0, f64::max);
    let mc = chi.iter().map(|c| c.0).fold(0.0, f64::max);
    let below = chi.iter().all(|c| c.1);
    outcome(
        mq < 1e-5 && mb < 1e-6 && mc < 1e-3 && below,
        format!("max |qmle - grid| = {mq:.2e}, max |bayes - trapezoid| = {mb:.2e}, max rel chi0 err = {mc:.2e}, oracle >= module: {below}"),
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let (mut worst_g, mut worst_h, mut min_q, mut min_negy) = (0.0f64, 0.0f64, f64::INFINITY, f64::INFINITY);
    for name in BUILTIN_NAMES {
        let m = builtin(name).unwrap();
        let (lo, hi) = (m.theta_domain.lo()[0], m.theta_domain.hi()[0]);
        for s in 0..20u64 {
            let ts = lo + (hi - lo) * (0.1 + 0.8 * ((s as f64 * 0.618_033_988_7) % 1.0));
            let obs = path(&m, 200, &[ts], 5005, s);
            let q = QuasiLikelihood::new(&obs, &m).unwrap();
            pass &= log_z_field(&q, &[ts], &[0.0]).unwrap().exp() == 1.0;
            for k in (0..=obs.n).step_by(20) {
                let x = obs.x_at(k);
                pass &= q_divergence(&m, x, &[ts], &[ts]).unwrap() == 0.0;
                for t in linspace(lo, hi, 41) {
                    min_q = min_q.min(q_divergence(&m, x, &[t], &[ts]).unwrap());
                }
            }
            for t in linspace(lo, hi, 101) {
                min_negy = min_negy.min(-y_limit(&obs, &m, &[ts], &[t]).unwrap());
            }
            let th = (ts + 0.05 * (hi - lo)).min(hi - 0.01 * (hi - lo));
            let e = q.eval(&[th]).unwrap();
            let step = 1e-5 * th.abs().max(1.0);
            let fd_g = (q.value(&[th + step]).unwrap() - q.value(&[th - step]).unwrap()) / (2.0 * step);
            let fd_h = (q.eval(&[th + step]).unwrap().grad[0] - q.eval(&[th - step]).unwrap().grad[0]) / (2.0 * step);
            let gscale = e.grad[0].abs().max(1e-3 * e.value.abs()).max(1.0);
            worst_g = worst_g.max((fd_g - e.grad[0]).abs() / gscale);
            worst_h = worst_h.max((fd_h - e.hess[(0, 0)]).abs() / e.hess[(0, 0)].abs().max(1.0));
        }
    }
    pass &= min_q >= -1e-10 && min_negy >= 0.0 && worst_g < 1e-6 && worst_h < 1e-5;
    notes.push(format!("min Q {min_q:.1e}, min -Y {min_negy:.1e}, FD rel err grad {worst_g:.1e} hess {worst_h:.1e}"));
    let power = supporting_bound_check(&SupportingFunctionSpec::power(), 0.25, 201, 201).unwrap();
    let sinsin = supporting_bound_check(&SupportingFunctionSpec::sin_sin(), 0.0, 201, 201).unwrap();
    pass &= power.min_slack >= 0.0 && sinsin.min_slack >= 0.0;
    notes.push(format!("support slack power {:.2e}, sin-sin {:.2e}", power.min_slack, sinsin.min_slack));
    outcome(pass, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();

    let es = builtin("exp-sin2").unwrap();
    let r_grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let mc = McSettings::new(500, 1.0, 200, 6006);
    let u_max = 500f64.sqrt() * 2.0 * PI;
    let pl = pldi_tail(&es, &[1.0], &r_grid, &default_u_grid(u_max, 4001, &r_grid), &mc).unwrap();
    let nested = pl.hits.windows(2).all(|w| w[0] >= w[1]);
    pass &= nested;
    notes.push(format!("pldi hits {:?} nested={nested}", pl.hits));

    let pw = builtin("power").unwrap();
    let r_grid = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];
    let rep = h2_tail_curve(&pw, &[0.25], &r_grid, &McSettings::new(200, 1.0, 1000, 6007), &ChiOptions::default()).unwrap();
    let positive = rep.tail_prob_raw[0] > 0.0;
    let decaying = rep.tail_prob.windows(2).all(|w| w[0] >= w[1]) && rep.tail_prob_raw.last() < rep.tail_prob_raw.first();
    let exp_ok = rep.fitted_exponent.is_some_and(|e| e.is_finite() && e < 0.0);
    pass &= positive && decaying && exp_ok;
    notes.push(format!(
        "power tail {:?}, slope {:.3}",
        rep.tail_prob_raw.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        rep.fitted_exponent.unwrap_or(f64::NAN)
    ));

    for (j, alphas) in [(1usize, vec![1.0, 2.0]), (2, vec![1.0, 2.0, 3.0])] {
        let s = separation_check(j, &alphas, 1.0, 1.0, &[1e3, 1e6], 4000, 6008).unwrap();
        let (l3, l6) = (s.cells[0].implied_l, s.cells[1].implied_l);
        let stable = (l3 - l6).abs() / l6 <= 0.1;
        pass &= s.min_positive && stable;
        notes.push(format!("J={j}: L(1e3)={l3:.4}, L(1e6)={l6:.4}"));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let base = StudyConfig::from_json(
        r#"{
            "schema": 1,
            "model": "sin-sin",
            "theta_star": [0.0],
            "n_list": [50, 250],
            "replicates": 64,
            "estimators": [
                {"kind": "qmle", "init": [0.5], "multistart": false},
                {"kind": "qmle", "init": [0.5]},
                {"kind": "bayes"},
                {"kind": "qmle-bayes-init"}
            ],
            "seed": 7007,
            "dump_reps": true
        }"#,
    )
    .unwrap();
    let render = |exec: Execution, threads: Option<usize>| {
        let mut c = base.clone();
        c.execution = exec;
        c.threads = threads;
        let r = run_study(&c).unwrap();
        let cells = serde_json::to_string(&r.cells).unwrap();
        let reps = qla::mcstudy::reps_csv(&r).unwrap();
        (cells, reps)
    };
    let reference = render(Execution::Sequential, None);
    let mut same = true;
    for t in [1, 2, 4, 7] {
        same &= render(Execution::Parallel, Some(t)) == reference;
    }
    same &= render(Execution::Sequential, None) == reference;
    outcome(same, "sequential vs parallel with 1, 2, 4, 7 workers: reports and replicate dumps byte-identical")
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 Table 1 reproduction (exp-sin2)", criterion_1),
        ("2 Table 2 QMLE bias vs Bayes (sin-sin)", criterion_2),
        ("3 mixed-normal standardization", criterion_3),
        ("4 oracle equivalence", criterion_4),
        ("5 analytic invariants", criterion_5),
        ("6 tail inequalities and separation", criterion_6),
        ("7 determinism across thread counts", criterion_7),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name} [{:.1}s]: {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
