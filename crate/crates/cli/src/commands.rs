//! Subcommand runners. Each produces a [`Table`]; writing is left to
//! [`crate::output`].

use jumptime::estimators::{char_fn, coverage_study, density_estimate, duality_suite, min_time_for_cq};
use jumptime::ibp::{build_blocks_from_events, ibp_estimate, Functional, RunConfig, TestFunction};
use jumptime::measures::IntensityMeasure;
use jumptime::model::{check_hypotheses, BuiltinParams, HypothesisGrid, Model};
use jumptime::numerics::{logspace, map_paths};
use jumptime::rng::PathRng;
use jumptime::sde::{apriori_bound, solve_with, SolveOptions};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, MeasureSpec};
use crate::RunError;

pub const SUBCOMMANDS: [&str; 8] =
    ["simulate", "theta", "duality", "ibp", "decay", "density", "coverage", "check-model"];

/// Result rows plus run-level figures for the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Map<String, Value>,
    /// Outcome of the subcommand's built-in acceptance check.
    pub passed: bool,
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Shortest round-trip formatting, with exponents for extreme magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn model(cfg: &ExperimentConfig) -> Result<Model, RunError> {
    Ok(Model::builtin(&cfg.model_name, BuiltinParams { b: cfg.b, g0: cfg.g0, x0: cfg.x0 })?)
}

pub fn measure(cfg: &ExperimentConfig) -> Result<IntensityMeasure, RunError> {
    Ok(match &cfg.measure {
        MeasureSpec::PowerLaw { lambda } => IntensityMeasure::mu_lambda(*lambda)?,
        MeasureSpec::Table { text, .. } => IntensityMeasure::parse_table(text)?,
    })
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<RunConfig, RunError> {
    let rc = RunConfig {
        t: cfg.t,
        n: cfg.n,
        truncation: cfg.truncation,
        levels: cfg.levels,
        paths: cfg.paths,
        seed: cfg.seed,
        chunk_size: cfg.chunk_size,
        g: Functional::parse(&cfg.g)?,
    };
    rc.validate()?;
    Ok(rc)
}

/// Fails with a hypothesis error unless the spot checks pass.
fn require_hypotheses(model: &Model, measure: &IntensityMeasure, t: f64) -> Result<(), RunError> {
    let grid = HypothesisGrid { t_max: t, ..HypothesisGrid::default() };
    check_hypotheses(model, measure, &grid).into_result()?;
    Ok(())
}

pub fn run(subcommand: &str, cfg: &ExperimentConfig) -> Result<Table, RunError> {
    match subcommand {
        "simulate" => simulate(cfg),
        "theta" => theta(cfg),
        "duality" => duality(cfg),
        "ibp" => ibp(cfg),
        "decay" => decay(cfg),
        "density" => density(cfg),
        "coverage" => coverage(cfg),
        "check-model" => check_model(cfg),
        other => Err(RunError::Model(jumptime::Error::Unsupported(format!("subcommand `{other}`")))),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu, rc) = (model(cfg)?, measure(cfg)?, run_config(cfg)?);
    let sampler = rc.sampler(&mu)?;
    let opts = SolveOptions { tangent: false, plan: None };
    let rows = map_paths(rc.paths, rc.chunk_size, |p| {
        let (events, _) = rc.sample(&sampler, p)?;
        let in_gamma = build_blocks_from_events(&events, rc.t, rc.levels)?.active_cells().is_some();
        let in_en = events.iter().filter(|e| e.in_en).count();
        let path = solve_with(&m, events, rc.t, &opts)?;
        let within = path.stats().sup_abs <= apriori_bound(&m, &path);
        Ok::<_, jumptime::Error>((
            vec![
                p.to_string(),
                path.len().to_string(),
                in_en.to_string(),
                num(path.terminal()),
                num(path.stats().sup_abs),
                (in_gamma as u8).to_string(),
            ],
            within,
        ))
    })?;
    let violations = rows.iter().filter(|r| !r.1).count();
    let mut summary = Map::new();
    summary.insert("apriori_violations".into(), json!(violations));
    Ok(Table {
        header: cols(&["path", "jumps", "jumps_in_en", "terminal", "sup_abs", "in_gamma"]),
        rows: rows.into_iter().map(|r| r.0).collect(),
        summary,
        passed: violations == 0,
    })
}

fn theta(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu) = (model(cfg)?, measure(cfg)?);
    let rep = mu.theta_sequence(|a| m.alpha_lower(a), &cfg.theta_n)?;
    let n_max = rep.rows.last().map_or(1, |r| r.n);
    let increment = mu.observed_increment(n_max);
    let rows = rep
        .rows
        .iter()
        .zip(&rep.tail_min)
        .map(|(r, tm)| vec![r.n.to_string(), num(r.mass), num(r.integral), num(r.theta), num(*tm)])
        .collect();
    let mut summary = Map::new();
    summary.insert("liminf_proxy".into(), json!(num(rep.liminf_proxy)));
    summary.insert("max_mass_increment".into(), json!(num(increment)));
    let theta = rep.liminf_proxy.max(0.0);
    let times: Vec<String> = (0..4).map(|q| min_time_for_cq(theta, q).map(num)).collect::<Result<_, _>>()?;
    summary.insert("min_time_for_cq_q0_to_q3".into(), json!(times));
    let passed = rep.rows.iter().all(|r| r.theta.is_finite()) && increment <= 1.0;
    Ok(Table { header: cols(&["n", "mass", "integral", "theta", "tail_min"]), rows, summary, passed })
}

fn duality(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu, rc) = (model(cfg)?, measure(cfg)?, run_config(cfg)?);
    require_hypotheses(&m, &mu, rc.t)?;
    let tab = duality_suite(&m, &mu, &RunConfig { levels: 1, ..rc })?;
    let rows = tab
        .rows
        .iter()
        .map(|r| vec![r.f.name().into(), r.u.name().into(), num(r.mean), num(r.stderr), (r.pass as u8).to_string()])
        .collect();
    let mut summary = Map::new();
    summary.insert("gamma_coverage".into(), json!(num(tab.gamma_coverage)));
    Ok(Table {
        header: cols(&["f", "u", "mean", "stderr", "pass"]),
        rows,
        summary,
        passed: tab.rows.iter().all(|r| r.pass),
    })
}

fn ibp(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu, rc) = (model(cfg)?, measure(cfg)?, run_config(cfg)?);
    require_hypotheses(&m, &mu, rc.t)?;
    let phis: Vec<TestFunction> = cfg.phi.iter().map(|s| TestFunction::parse(s)).collect::<Result<_, _>>()?;
    let ests = ibp_estimate(&m, &mu, &rc, &phis)?;
    let rows = ests
        .iter()
        .map(|e| {
            vec![
                e.phi.label(),
                rc.levels.to_string(),
                rc.g.name().into(),
                num(e.estimate),
                num(e.stderr),
                num(e.direct),
                num(e.direct_stderr),
                num(e.paired_stderr),
                num(e.gamma_coverage),
                (e.agrees(3.0) as u8).to_string(),
            ]
        })
        .collect();
    let mut summary = Map::new();
    summary.insert("resampled_ties".into(), json!(ests.first().map_or(0, |e| e.resampled)));
    summary.insert("unbounded_test_function".into(), json!(ests.iter().any(|e| e.unbounded_warning)));
    Ok(Table {
        header: cols(&[
            "phi",
            "levels",
            "g",
            "estimate",
            "stderr",
            "direct",
            "direct_stderr",
            "paired_stderr",
            "gamma_coverage",
            "agree",
        ]),
        rows,
        summary,
        passed: ests.iter().all(|e| e.agrees(3.0)),
    })
}

fn decay(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu, rc) = (model(cfg)?, measure(cfg)?, run_config(cfg)?);
    let mut xi = vec![0.0];
    xi.extend(logspace(cfg.xi_min, cfg.xi_max, cfg.xi_count));
    let rep = char_fn(&m, &mu, &rc, &xi, &cfg.decay_bounds)?;
    let mut header = cols(&["xi", "re", "im", "modulus", "stderr"]);
    header.extend(rep.bounds.iter().map(|b| format!("decay_n{}_L{}", b.n, b.levels)));
    let rows = rep
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![num(r.xi), num(r.re), num(r.im), num(r.modulus), num(r.stderr)];
            row.extend(rep.bounds.iter().map(|b| num(b.decay_term[i])));
            row
        })
        .collect();
    let mut summary = Map::new();
    summary.insert("slope_top_decade".into(), json!(rep.slope.map(num)));
    let curves: Vec<Value> = rep
        .bounds
        .iter()
        .map(|b| {
            json!({
                "n": b.n,
                "levels": b.levels,
                "mass": num(b.mass),
                "coverage_term": num(b.coverage_term),
                "ln_a": num(b.ln_a),
            })
        })
        .collect();
    summary.insert("bounds".into(), Value::Array(curves));
    let passed = rep.rows[0].modulus == 1.0 && rep.rows.iter().all(|r| r.modulus <= 1.0 + 3.0 * r.stderr);
    Ok(Table { header, rows, summary, passed })
}

fn density(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu, rc) = (model(cfg)?, measure(cfg)?, run_config(cfg)?);
    require_hypotheses(&m, &mu, rc.t)?;
    let ys: Vec<f64> =
        (0..cfg.y_count).map(|i| cfg.y_min + (cfg.y_max - cfg.y_min) * i as f64 / (cfg.y_count - 1) as f64).collect();
    let tab = density_estimate(&m, &mu, &RunConfig { levels: 1, ..rc }, &ys, &cfg.bandwidths)?;
    let rows = tab
        .rows
        .iter()
        .map(|r| {
            let spread = tab.consistency.iter().find(|c| c.0 == r.y).map_or(0.0, |c| c.1);
            vec![
                num(r.y),
                num(r.eps),
                num(r.kde),
                num(r.kde_se),
                num(r.direct),
                num(r.direct_se),
                num(r.ibp),
                num(r.ibp_se),
                num(spread),
                (r.agree as u8).to_string(),
            ]
        })
        .collect();
    let mut summary = Map::new();
    summary.insert("sample_sd".into(), json!(num(tab.sample_sd)));
    let integrals: Vec<Value> = tab
        .integrals
        .iter()
        .map(|i| {
            json!({
                "eps": num(i.eps),
                "integral": num(i.integral),
                "stderr": num(i.stderr),
                "gamma_coverage": num(i.gamma_coverage),
                "agree": i.agree,
            })
        })
        .collect();
    summary.insert("integrals".into(), Value::Array(integrals));
    let passed = tab.rows.iter().all(|r| r.agree) && tab.integrals.iter().all(|i| i.agree);
    Ok(Table {
        header: cols(&["y", "eps", "kde", "kde_se", "direct", "direct_se", "ibp", "ibp_se", "consistency", "agree"]),
        rows,
        summary,
        passed,
    })
}

fn coverage(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let mu = measure(cfg)?;
    run_config(cfg)?;
    let rows = coverage_study(&mu, cfg.t, &cfg.coverage_grid, cfg.paths, cfg.seed, cfg.chunk_size)?;
    let passed = rows.iter().all(|r| r.pass);
    Ok(Table {
        header: cols(&["n", "levels", "mass", "bound", "empirical", "stderr", "pass"]),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.levels.to_string(),
                    num(r.mass),
                    num(r.bound),
                    num(r.empirical),
                    num(r.stderr),
                    (r.pass as u8).to_string(),
                ]
            })
            .collect(),
        summary: Map::new(),
        passed,
    })
}

/// Partial derivatives must match central differences to this relative error.
pub const PARTIAL_TOLERANCE: f64 = 1e-5;

fn check_model(cfg: &ExperimentConfig) -> Result<Table, RunError> {
    let (m, mu) = (model(cfg)?, measure(cfg)?);
    let grid = HypothesisGrid { t_max: cfg.t, ..HypothesisGrid::default() };
    let rep = check_hypotheses(&m, &mu, &grid);
    let atoms = mu.exhaustion_len(cfg.n).max(1);
    let mut rng = PathRng::new(cfg.seed, 1, 0);
    let points: Vec<(f64, f64, f64)> = (0..cfg.check_points)
        .map(|_| {
            let t = cfg.t * rng.open01();
            let k = ((rng.open01() * atoms as f64) as usize).min(atoms - 1) + 1;
            let a = mu.atom(k).map_or(1.0, |x| x.0);
            (t, a, -10.0 + 20.0 * rng.open01())
        })
        .collect();
    let partials = m.verify_partials(&points);
    let mut rows = Vec::new();
    for c in &rep.checks {
        let (t, a, x) = c.witness;
        rows.push(vec![
            c.id.into(),
            "hypothesis".into(),
            num(c.worst_margin),
            num(t),
            num(a),
            num(x),
            (c.passed as u8).to_string(),
        ]);
    }
    for p in &partials {
        let (t, a, x) = p.witness;
        let ok = p.max_rel_err <= PARTIAL_TOLERANCE;
        rows.push(vec![
            p.name.into(),
            "partial".into(),
            num(p.max_rel_err),
            num(t),
            num(a),
            num(x),
            (ok as u8).to_string(),
        ]);
    }
    let mut summary = Map::new();
    summary.insert("synthesized_partials".into(), json!(m.synthesized_partials()));
    let passed = rep.all_passed() && partials.iter().all(|p| p.max_rel_err <= PARTIAL_TOLERANCE);
    Ok(Table {
        header: cols(&["check", "kind", "worst", "witness_t", "witness_a", "witness_x", "passed"]),
        rows,
        summary,
        passed,
    })
}
