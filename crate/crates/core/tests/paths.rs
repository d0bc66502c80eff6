use std::sync::Arc;

use jumptime::estimators::{bound_study, derivative_study};
use jumptime::flow::{first_derivative, first_derivative_product, gamma_n, gamma_n_drift_corrected, TangentFlow};
use jumptime::ibp::RunConfig;
use jumptime::measures::IntensityMeasure;
use jumptime::model::{CustomCoefficients, Model};
use jumptime::sde::{apriori_bound, solve_path, Event};
use proptest::prelude::*;

fn wavy() -> Model {
    let mut cc = CustomCoefficients::new(|t, a, x| a * (1.0 + 0.3 * x.sin() + 0.1 * t), |_, x| 0.5 * x.sin() + 0.4 * x);
    cc.c_x = Some(Arc::new(|_, a, x| 0.3 * a * x.cos()));
    cc.c_t = Some(Arc::new(|_, a, _| 0.1 * a));
    cc.g_x = Some(Arc::new(|_, x| 0.5 * x.cos() + 0.4));
    Model::custom("wavy", cc, 0.3, |a| 1.4 * a, 1.0, |a| 0.01 * a)
}

fn events_strategy() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0.001f64..0.999, 1usize..30), 0..8).prop_map(|raw| {
        let mut times: Vec<f64> = raw.iter().map(|r| r.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let marks: Vec<f64> = raw.iter().take(times.len()).map(|r| 1.0 / r.1 as f64).collect();
        Event::from_times(&times, &marks)
    })
}

#[test]
fn linear_drift_matches_closed_form() {
    let (b, x0) = (0.7, -0.4);
    let m = Model::linear_drift(b, x0);
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let cfg = RunConfig::new(1.3, 20, 1, 1000, 17);
    let sampler = cfg.sampler(&mu).unwrap();
    let mut worst = 0f64;
    for p in 0..cfg.paths {
        let (ev, _) = cfg.sample(&sampler, p).unwrap();
        let exact = (b * cfg.t).exp() * x0 + ev.iter().map(|e| e.mark * (b * (cfg.t - e.time)).exp()).sum::<f64>();
        let x = solve_path(&m, ev, cfg.t).unwrap().terminal();
        worst = worst.max((x - exact).abs() / exact.abs().max(1e-300));
    }
    assert!(worst <= 1e-9, "worst relative error {worst}");
}

#[test]
fn derivative_routes_agree_on_builtins() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    for m in [Model::linear_drift(1.0, 1.0), Model::geometric(1.0)] {
        let s = derivative_study(&m, &mu, &RunConfig::new(1.0, 10, 1, 300, 3)).unwrap();
        assert!(s.first_two_method <= 1e-8, "{}: {s:?}", m.name());
        assert!(s.second_two_method <= 1e-8, "{}: {s:?}", m.name());
        assert!(s.first_vs_fd <= 1e-4 && s.second_vs_fd <= 1e-4 && s.mixed_vs_fd <= 1e-4, "{}: {s:?}", m.name());
    }
}

#[test]
fn derivative_routes_agree_on_nonlinear_model() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    let s = derivative_study(&wavy(), &mu, &RunConfig::new(1.0, 10, 1, 100, 8)).unwrap();
    assert!(s.first_two_method <= 1e-8 && s.second_two_method <= 1e-6, "{s:?}");
    assert!(s.first_vs_fd <= 1e-4 && s.second_vs_fd <= 1e-4 && s.mixed_vs_fd <= 1e-4, "{s:?}");
}

#[test]
fn pathwise_bounds_hold_for_builtins() {
    let mu = IntensityMeasure::mu_lambda(0.5).unwrap();
    for m in [Model::linear_drift(1.0, 1.0), Model::geometric(1.0)] {
        for n in [10, 50] {
            let s = bound_study(&m, &mu, &RunConfig::new(1.0, n, 1, 2000, 21)).unwrap();
            assert_eq!(s.gamma_violations, 0, "{} n={n}: {s:?}", m.name());
            assert_eq!(s.product_violations, 0, "{s:?}");
            assert_eq!(s.growth_violations + s.apriori_violations + s.tangent_violations, 0, "{s:?}");
            assert_eq!(s.p_norm_violations, 0, "{s:?}");
            assert!(s.max_product_defect < 1e-9, "{s:?}");
        }
    }
}

#[test]
fn contracting_drift_breaks_uncorrected_lower_bound() {
    // X = x0 e^{-t} + sum a_k e^{-(t - T_k)}: the derivative carries e^{-(t - T_k)}
    // which the uncorrected bound ignores
    let m = Model::linear_drift(-3.0, 1.0);
    let ev = Event::from_times(&[0.05], &[1.0]);
    let path = solve_path(&m, ev, 1.0).unwrap();
    let u = first_derivative(&m, &path, 0).unwrap().abs();
    assert!(u < gamma_n(&m, &path), "{u} vs {}", gamma_n(&m, &path));
    assert!(u >= gamma_n_drift_corrected(&m, &path));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tangent_product_is_identity_and_routes_agree(ev in events_strategy()) {
        let m = wavy();
        let path = solve_path(&m, ev, 1.0).unwrap();
        let tf = TangentFlow::new(&m, &path).unwrap();
        prop_assert!(tf.product_defect() < 1e-9);
        for k in 0..path.len() {
            let a = first_derivative(&m, &path, k).unwrap();
            let b = first_derivative_product(&m, &path, k).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-12));
        }
    }

    #[test]
    fn apriori_bound_holds(ev in events_strategy(), x0 in -3.0f64..3.0) {
        for m in [Model::linear_drift(1.0, x0), Model::geometric(x0), wavy().with_x0(x0)] {
            let path = solve_path(&m, ev.clone(), 1.0).unwrap();
            prop_assert!(path.stats().sup_abs <= apriori_bound(&m, &path));
        }
    }

    #[test]
    fn translation_alpha_is_minus_b_times_mark(b in -3.0f64..3.0, t in 0.0f64..2.0, a in 0.001f64..1.0, x in -10.0f64..10.0) {
        let m = Model::translation(b, 0.0, 0.0);
        prop_assert!((m.alpha(t, a, x) + b * a).abs() <= 1e-14);
    }

    #[test]
    fn doubling_steps_is_a_small_change(ev in events_strategy()) {
        use jumptime::sde::{solve_with, SolveOptions};
        let m = wavy();
        let base = solve_path(&m, ev.clone(), 1.0).unwrap();
        let opts = SolveOptions { tangent: false, plan: Some(base.plan().refined(2)) };
        let fine = solve_with(&m, ev, 1.0, &opts).unwrap();
        prop_assert!((base.terminal() - fine.terminal()).abs() <= 1e-9 * (1.0 + base.terminal().abs()));
    }
}
