use jumptime::estimators::{char_fn, coverage_study, density_estimate, duality_suite, min_time_for_cq};
use jumptime::ibp::{ibp_estimate, Functional, RunConfig, TestFunction};
use jumptime::measures::IntensityMeasure;
use jumptime::model::Model;
use jumptime::numerics::logspace;

/// `|E exp(i xi X_t)|` for `X = x0 e^{bt} + sum a_k e^{b(t - T_k)}`, by Simpson
/// quadrature of the Levy-Khintchine exponent.
fn linear_drift_modulus(mu: &IntensityMeasure, b: f64, t: f64, n_atoms: usize, xi: f64) -> f64 {
    let panels = 20_000;
    let h = t / panels as f64;
    let mut exponent = 0.0;
    for k in 1..=n_atoms {
        let (a, w) = mu.atom(k).unwrap();
        let f = |s: f64| (xi * a * (b * (t - s)).exp()).cos() - 1.0;
        let mut acc = f(0.0) + f(t);
        for i in 1..panels {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        exponent += w * acc * h / 3.0;
    }
    exponent.exp()
}

#[test]
fn char_fn_matches_levy_khintchine() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let m = Model::linear_drift(0.02, 1.0);
    let cfg = RunConfig::new(1.0, 5, 1, 20_000, 99);
    let xi = [0.0, 1.0, 3.0, 10.0, 100.0];
    let rep = char_fn(&m, &mu, &cfg, &xi, &[(5, 1), (5, 2)]).unwrap();
    assert_eq!(rep.rows[0].modulus, 1.0);
    for r in &rep.rows[1..] {
        let exact = linear_drift_modulus(&mu, 0.02, 1.0, 5, r.xi);
        assert!((r.modulus - exact).abs() <= 4.0 * r.stderr + 2.0 / cfg.paths as f64, "{r:?} vs {exact}");
        assert!(r.modulus <= 1.0 + 3.0 * r.stderr);
    }
    assert_eq!(rep.bounds.len(), 2);
    assert!(rep.bounds[1].coverage_term > rep.bounds[0].coverage_term);
}

#[test]
fn char_fn_decays_over_top_decade() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let m = Model::linear_drift(0.02, 1.0);
    let xi = logspace(100.0, 1000.0, 12);
    let exact: Vec<f64> = xi.iter().map(|&w| linear_drift_modulus(&mu, 0.02, 1.0, 5, w)).collect();
    let exact_slope = jumptime::numerics::ls_slope(
        &xi.iter().map(|w| w.ln()).collect::<Vec<_>>(),
        &exact.iter().map(|v| v.ln()).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(exact_slope < -0.3, "{exact_slope}");
    let rep = char_fn(&m, &mu, &RunConfig::new(1.0, 5, 1, 20_000, 4), &xi, &[]).unwrap();
    let slope = rep.slope.unwrap();
    assert!(slope < 0.0 && (slope - exact_slope).abs() < 0.25, "{slope} vs {exact_slope}");
}

#[test]
fn min_time_arithmetic() {
    assert_eq!(min_time_for_cq(1.0, 0).unwrap(), 32.0);
    assert_eq!(min_time_for_cq(1.0, 2).unwrap(), 576.0);
    assert_eq!(min_time_for_cq(0.0, 7).unwrap(), 0.0);
}

#[test]
fn duality_matrix_passes() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    for m in [Model::linear_drift(1.0, 1.0), Model::geometric(1.0)] {
        let tab = duality_suite(&m, &mu, &RunConfig::new(1.0, 10, 1, 20_000, 31)).unwrap();
        for r in &tab.rows {
            assert!(r.pass, "{}: {r:?}", m.name());
        }
        assert!(tab.gamma_coverage > 0.5);
    }
}

#[test]
fn coverage_grid_respects_bound() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let grid: Vec<(usize, usize)> = [1, 5, 20, 100].iter().flat_map(|&n| [(n, 1), (n, 2)]).collect();
    let rows = coverage_study(&mu, 1.0, &grid, 20_000, 12, 4096).unwrap();
    for r in &rows {
        assert!(r.pass, "{r:?}");
    }
    assert!((rows[0].bound - (-0.5f64).exp()).abs() < 1e-15);
    // mu(E_100) t / 2 > 10: no misses at all
    assert_eq!(rows[6].empirical, 0.0);
}

#[test]
fn density_methods_agree() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let m = Model::linear_drift(1.0, 1.0);
    let ys: Vec<f64> = (0..=40).map(|i| -2.0 + 0.5 * i as f64).collect();
    let tab = density_estimate(&m, &mu, &RunConfig::new(1.0, 10, 1, 20_000, 8), &ys, &[0.05, 0.1]).unwrap();
    for r in &tab.rows {
        assert!(r.agree, "{r:?}");
    }
    for i in &tab.integrals {
        assert!(i.agree, "{i:?}");
    }
}

#[test]
fn ibp_matches_direct_over_model_grid() {
    let phis = [TestFunction::Sin, TestFunction::Cos, TestFunction::Bump { center: 4.0, width: 3.0 }];
    for lambda in [0.5, 1.0] {
        let mu = IntensityMeasure::mu_lambda(lambda).unwrap();
        for m in [Model::linear_drift(1.0, 1.0), Model::geometric(1.0)] {
            for n in [10, 50] {
                let ests = ibp_estimate(&m, &mu, &RunConfig::new(1.0, n, 1, 20_000, 77), &phis).unwrap();
                for e in &ests {
                    assert!(e.agrees(3.0), "{} lambda={lambda} n={n}: {e:?}", m.name());
                }
            }
        }
    }
}

#[test]
fn ibp_with_terminal_weight_and_two_levels() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let m = Model::geometric(1.0);
    let mut cfg = RunConfig::new(1.0, 10, 1, 20_000, 5);
    cfg.g = Functional::Terminal;
    for e in ibp_estimate(&m, &mu, &cfg, &[TestFunction::Sin]).unwrap() {
        assert!(e.agrees(3.0), "{e:?}");
    }
    let l2 = RunConfig::new(1.0, 10, 2, 20_000, 6);
    for e in ibp_estimate(&m, &mu, &l2, &[TestFunction::Sin, TestFunction::Cos]).unwrap() {
        assert!(e.agrees(3.0), "{e:?}");
    }
}
