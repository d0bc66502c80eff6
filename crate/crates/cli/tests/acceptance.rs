//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Sample sizes and tolerances are fixed; do not shrink them.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use jumptime::estimators::{bound_study, coverage_study, derivative_study, duality_suite, min_time_for_cq};
use jumptime::ibp::{
    build_blocks, build_blocks_from_events, closed_cell_duality, ibp_estimate, p_norm_zero, Jet, RunConfig, Snapshot,
    TestFunction,
};
use jumptime::measures::{laplace_check, IntensityMeasure};
use jumptime::model::Model;
use jumptime::sde::solve_path;
use jumptime::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn builtins() -> [Model; 2] {
    [Model::linear_drift(1.0, 1.0), Model::geometric(1.0)]
}

fn closed_form_oracle() -> Result<Outcome> {
    let (b, x0) = (1.0, 1.0);
    let m = Model::linear_drift(b, x0);
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let cfg = RunConfig::new(1.0, 50, 1, 1000, 101);
    let sampler = cfg.sampler(&mu)?;
    let mut worst = 0f64;
    for p in 0..cfg.paths {
        let (ev, _) = cfg.sample(&sampler, p)?;
        let exact = (b * cfg.t).exp() * x0 + ev.iter().map(|e| e.mark * (b * (cfg.t - e.time)).exp()).sum::<f64>();
        let x = solve_path(&m, ev, cfg.t)?.terminal();
        worst = worst.max((x - exact).abs() / exact.abs());
    }
    outcome(worst <= 1e-9, format!("max rel err {worst:.3e} <= 1e-9 over 1000 paths"))
}

fn derivative_agreement() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for m in [Model::linear_drift(1.0, 1.0), Model::geometric(1.0), Model::translation(1.0, 0.5, 1.0)] {
        let s = derivative_study(&m, &mu, &RunConfig::new(1.0, 10, 1, 1000, 202))?;
        let fd = s.first_vs_fd.max(s.second_vs_fd).max(s.mixed_vs_fd);
        ok &= s.first_two_method <= 1e-8 && fd <= 1e-4;
        detail.push(format!("{}: two-method {:.1e}, fd {:.1e}", m.name(), s.first_two_method, fd));
    }
    outcome(ok, detail.join("; "))
}

fn lower_bound() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut violations = 0;
    let mut detail = Vec::new();
    for m in builtins() {
        for n in [10, 50] {
            let s = bound_study(&m, &mu, &RunConfig::new(1.0, n, 1, 100_000, 303))?;
            violations += s.gamma_violations;
            detail.push(format!(
                "{} n={n}: {} violations, min ratio {:.3}",
                m.name(),
                s.gamma_violations,
                s.min_gamma_ratio
            ));
        }
    }
    outcome(violations == 0, detail.join("; "))
}

fn duality() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for m in builtins() {
        let tab = duality_suite(&m, &mu, &RunConfig::new(1.0, 10, 1, 100_000, 404))?;
        // cells that vanish identically have roundoff-sized stderr
        let worst = tab.rows.iter().filter(|r| r.stderr > 1e-12).map(|r| r.mean.abs() / r.stderr).fold(0.0, f64::max);
        ok &= tab.rows.iter().all(|r| r.pass);
        detail.push(format!(
            "{}: {}/6 cells pass, max |z| {worst:.2}",
            m.name(),
            tab.rows.iter().filter(|r| r.pass).count()
        ));
    }
    // exact per-path check on the active cell
    let cfg = RunConfig::new(1.0, 10, 1, 100, 405);
    let sampler = cfg.sampler(&mu)?;
    let mut worst = 0f64;
    let mut checked = 0;
    for m in builtins() {
        for p in 0..cfg.paths {
            let (ev, _) = cfg.sample(&sampler, p)?;
            let path = solve_path(&m, ev, cfg.t)?;
            let Some(cell) = build_blocks(&path, 1)?.active_cell(0) else { continue };
            let q = |s: &Snapshot, id: usize| -> Result<Jet> {
                let x = s.terminal_jet(id)?;
                Ok(x.compose(TestFunction::Cos.eval(x.v)) / Jet::new(x.d1, x.d2, 0.0))
            };
            worst = worst.max(closed_cell_duality(&m, &path, &cell, 24, q)?.abs_err());
            checked += 1;
        }
    }
    ok &= worst <= 1e-8;
    detail.push(format!("quadrature on {checked} cells: max err {worst:.1e}"));
    outcome(ok, detail.join("; "))
}

fn ibp_correctness() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for (levels, paths) in [(1, 100_000), (2, 400_000)] {
        for m in builtins() {
            let e = &ibp_estimate(&m, &mu, &RunConfig::new(1.0, 10, levels, paths, 505), &[TestFunction::Sin])?[0];
            let z = (e.estimate - e.direct) / e.combined_stderr();
            ok &= e.agrees(3.0);
            detail.push(format!("L={levels} {}: z={z:.2}", m.name()));
        }
    }
    outcome(ok, detail.join("; "))
}

fn coverage() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut grid = vec![(1, 1)];
    grid.extend([5, 20, 100].iter().flat_map(|&n| [(n, 1), (n, 2)]));
    let rows = coverage_study(&mu, 1.0, &grid, 100_000, 606, 4096)?;
    let first = &rows[0];
    let ok = rows.iter().all(|r| r.pass) && (first.bound - (-0.5f64).exp()).abs() < 1e-12;
    outcome(
        ok,
        format!(
            "{}/{} cells pass; n=1,L=1: {:.4} <= {:.4} + 3*{:.4}",
            rows.iter().filter(|r| r.pass).count(),
            rows.len(),
            first.empirical,
            first.bound,
            first.stderr
        ),
    )
}

fn p_norm() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(0.5)?;
    let mut violations = 0u64;
    let mut on_gamma = 0u64;
    for levels in [1, 2] {
        let cfg = RunConfig::new(1.0, 10, levels, 100_000, 707);
        let sampler = cfg.sampler(&mu)?;
        for p in 0..cfg.paths {
            let (ev, _) = cfg.sample(&sampler, p)?;
            let blocks = build_blocks_from_events(&ev, cfg.t, levels)?;
            if blocks.active_cells().is_none() {
                continue;
            }
            on_gamma += 1;
            let j = ev.iter().filter(|e| e.in_en).count() as f64;
            violations += (p_norm_zero(&blocks)? > 2.0 * levels as f64 / cfg.t * j) as u64;
        }
    }
    outcome(violations == 0, format!("{violations} violations over {on_gamma} paths in Gamma (L=1,2)"))
}

fn laplace() -> Result<Outcome> {
    let mu = IntensityMeasure::mu_lambda(1.0)?;
    type Pair = (&'static str, fn(f64) -> f64, f64);
    let pairs: [Pair; 3] = [("1", |_| 1.0, 0.5), ("a", |a| a, 1.0), ("a^2", |a| a * a, 3.0)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, f, s) in pairs {
        let chk = laplace_check(&mu, f, s, 1.0, 50, 100_000, 808)?;
        ok &= chk.within(3.0);
        detail.push(format!("f={name} s={s}: z={:.2}", (chk.empirical - chk.analytic) / chk.stderr));
    }
    outcome(ok, detail.join("; "))
}

fn theta_arithmetic() -> Result<Outcome> {
    let inv = |a: f64| a;
    let half = IntensityMeasure::mu_lambda(0.5)?.theta_sequence(inv, &[1_000_000])?.rows[0].theta;
    let one = IntensityMeasure::mu_lambda(1.0)?.theta_sequence(inv, &[1_000_000])?.rows[0].theta;
    let t32 = min_time_for_cq(1.0, 0)?;
    outcome(
        half <= 0.02 && (0.93..=0.99).contains(&one) && t32 == 32.0,
        format!("theta(0.5)={half:.5}, theta(1)={one:.5}, min_time(1,0)={t32}"),
    )
}

fn small_mark_asymptotics() -> Result<Outcome> {
    let (lambda, u) = (1.0, 1e-3);
    let ratio = IntensityMeasure::mu_lambda(lambda)?.ik_tail_integral(u)? * (1.0 + lambda) / u.powf(1.0 + lambda);
    outcome((ratio - 1.0).abs() <= 0.01, format!("ratio {ratio:.6} within 1% of 1"))
}

fn strip_volatile(manifest: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(manifest).expect("manifest is json");
    for k in jumptime_cli::output::VOLATILE_MANIFEST_KEYS {
        v.as_object_mut().expect("object").remove(k);
    }
    v.to_string()
}

fn reproducibility() -> Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| jumptime::Error::domain(e.to_string()))?;
    let mut identical = 0;
    let mut failed = Vec::new();
    for sub in jumptime_cli::commands::SUBCOMMANDS {
        let paths = if sub == "decay" { "2000" } else { "500" };
        let mut texts = Vec::new();
        for run in 0..2 {
            let dir = tmp.path().join(format!("{sub}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_jumptime"))
                .args([sub, "--seed", "1234", "--paths", paths, "--set", "theta.n=10,1000", "--out"])
                .arg(&dir)
                .output()
                .expect("binary runs")
                .status;
            let csv = fs::read(dir.join("result.csv")).unwrap_or_default();
            let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap_or_default();
            texts.push((status.code(), csv, if manifest.is_empty() { manifest } else { strip_volatile(&manifest) }));
        }
        if texts[0] == texts[1] && texts[0].0 == Some(0) && !texts[0].1.is_empty() {
            identical += 1;
        } else {
            failed.push(sub);
        }
    }
    outcome(failed.is_empty(), format!("{identical}/8 subcommands byte-identical; failing: {failed:?}"))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Result<Outcome>);
    let criteria: [Criterion; 11] = [
        ("closed-form SDE oracle", closed_form_oracle),
        ("derivative two-method and FD agreement", derivative_agreement),
        ("pathwise lower bound on the derivative", lower_bound),
        ("duality residuals and exact cell quadrature", duality),
        ("IBP estimator against direct MC (L=1,2)", ibp_correctness),
        ("coverage of the non-degenerate event", coverage),
        ("|p|_0 bound", p_norm),
        ("Laplace identity", laplace),
        ("theta arithmetic", theta_arithmetic),
        ("small-mark second moment asymptotics", small_mark_asymptotics),
        ("reproducibility of every subcommand", reproducibility),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match f() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += !passed as usize;
        println!(
            "criterion {:>2} {} {name}: {detail} ({:.1} s)",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
