//! Experiment-level estimators: characteristic-function decay, duality
//! residuals, density estimates, coverage of the non-degenerate set, and the
//! pathwise bound and derivative studies.
//!
//! Every driver samples path `p` from the substream `(seed, p)` and reduces
//! per-path results in path order, so outputs depend only on the inputs.

use crate::error::{Error, Result};
use crate::flow::{gamma_n, gamma_n_drift_corrected, growth_bound, mixed_fd, mixed_fd_with_step, FdBase, TangentFlow};
use crate::ibp::{
    border_points, build_blocks_from_events, collapse, ibp_path_l1, p_norm_zero, CellDensity, Functional, RunConfig,
    Snapshot, TestFunction, Uniform,
};
use crate::measures::IntensityMeasure;
use crate::model::Model;
use crate::numerics::{ls_slope, map_paths, CompensatedSum, RunningStats};
use crate::sde::{apriori_bound, nt_functional, solve_path, solve_with, SolveOptions};

/// `16 theta (q + 2) (q + 1)^2`.
pub fn min_time_for_cq(theta: f64, q: u32) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::domain(format!("theta must be non-negative, got {theta}")));
    }
    let q = q as f64;
    Ok(16.0 * theta * (q + 2.0) * (q + 1.0) * (q + 1.0))
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn terminal_values(model: &Model, measure: &IntensityMeasure, cfg: &RunConfig) -> Result<Vec<f64>> {
    let sampler = cfg.sampler(measure)?;
    let opts = SolveOptions { tangent: false, plan: None };
    map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, _) = cfg.sample(&sampler, p)?;
        Ok(solve_with(model, events, cfg.t, &opts)?.terminal())
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayRow {
    pub xi: f64,
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
    pub stderr: f64,
}

/// Envelope curves with all constants set to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCurve {
    pub n: usize,
    pub levels: usize,
    pub mass: f64,
    /// `exp(-mu(E_n) t / (2 L))`.
    pub coverage_term: f64,
    /// `ln A_{n,L}`, `A = mu(E_n)^L (int_{E_n} 1/alpha_lower dmu)^{L (L + 2)}`.
    pub ln_a: f64,
    /// `A_{n,L} / |xi|^L` on the xi grid.
    pub decay_term: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub bounds: Vec<BoundCurve>,
    /// Least-squares slope of `ln |phi|` against `ln xi` over the top decade.
    pub slope: Option<f64>,
    pub paths: u64,
}

/// Monte Carlo characteristic function of `X_t^N` on a grid of frequencies,
/// with the envelope curves for the requested `(n, L)` pairs.
pub fn char_fn(
    model: &Model,
    measure: &IntensityMeasure,
    cfg: &RunConfig,
    xi: &[f64],
    bound_cells: &[(usize, usize)],
) -> Result<DecayReport> {
    if cfg.paths < 1000 {
        return Err(Error::domain(format!("char_fn needs at least 1000 paths, got {}", cfg.paths)));
    }
    let xs = terminal_values(model, measure, cfg)?;
    let m = xs.len() as f64;
    let rows: Vec<DecayRow> = xi
        .iter()
        .map(|&w| {
            if w == 0.0 {
                return DecayRow { xi: w, re: 1.0, im: 0.0, modulus: 1.0, stderr: 0.0 };
            }
            let (mut sc, mut ss, mut scc, mut sss, mut scs) = (
                CompensatedSum::new(),
                CompensatedSum::new(),
                CompensatedSum::new(),
                CompensatedSum::new(),
                CompensatedSum::new(),
            );
            for &x in &xs {
                let (s, c) = (w * x).sin_cos();
                sc.add(c);
                ss.add(s);
                scc.add(c * c);
                sss.add(s * s);
                scs.add(c * s);
            }
            let (c, s) = (sc.value() / m, ss.value() / m);
            let var_c = (scc.value() / m - c * c) * m / (m - 1.0);
            let var_s = (sss.value() / m - s * s) * m / (m - 1.0);
            let cov = (scs.value() / m - c * s) * m / (m - 1.0);
            let modulus = c.hypot(s);
            let stderr = if modulus > 0.0 {
                ((c * c * var_c + s * s * var_s + 2.0 * c * s * cov).max(0.0) / m).sqrt() / modulus
            } else {
                ((var_c + var_s) / m).sqrt()
            };
            DecayRow { xi: w, re: c, im: s, modulus, stderr }
        })
        .collect();

    let mut bounds = Vec::with_capacity(bound_cells.len());
    for &(n, levels) in bound_cells {
        if levels == 0 {
            return Err(Error::domain("level count L must be >= 1"));
        }
        let mass = measure.mass(n)?;
        let inv = measure.integrate(|a| 1.0 / model.alpha_lower(a), n)?;
        let lf = levels as f64;
        let ln_a = lf * mass.ln() + lf * (lf + 2.0) * inv.ln();
        bounds.push(BoundCurve {
            n,
            levels,
            mass,
            coverage_term: (-mass * cfg.t / (2.0 * lf)).exp(),
            ln_a,
            decay_term: xi.iter().map(|w| (ln_a - lf * w.abs().ln()).exp()).collect(),
        });
    }

    let top = xi.iter().cloned().fold(0.0f64, f64::max);
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.xi > 0.0 && r.xi >= top / 10.0 && r.modulus > 0.0)
        .map(|r| (r.xi.ln(), r.modulus.ln()))
        .unzip();
    Ok(DecayReport { rows, bounds, slope: ls_slope(&lx, &ly), paths: cfg.paths })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualityRow {
    pub f: Functional,
    pub u: Functional,
    pub mean: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualityTable {
    pub rows: Vec<DualityRow>,
    pub gamma_coverage: f64,
    pub paths: u64,
}

pub const DUALITY_F: [Functional; 2] = [Functional::Active, Functional::Terminal];
pub const DUALITY_U: [Functional; 3] = [Functional::One, Functional::Active, Functional::Terminal];

/// Residuals `1_Gamma (U D F + F delta(U) - [F U])` of the level-1 duality
/// over the matrix `F in {V, X_t}`, `U in {1, V, X_t}`.
pub fn duality_suite(model: &Model, measure: &IntensityMeasure, cfg: &RunConfig) -> Result<DualityTable> {
    let sampler = cfg.sampler(measure)?;
    let cells = DUALITY_F.len() * DUALITY_U.len();
    let per_path = map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, _) = cfg.sample(&sampler, p)?;
        let blocks = build_blocks_from_events(&events, cfg.t, 1)?;
        let Some(cell) = blocks.active_cell(0) else {
            return Ok((false, vec![0.0; cells]));
        };
        let path = solve_path(model, events, cfg.t)?;
        let snap = Snapshot::new(model, path.clone())?;
        let v = snap.time_of(cell.var_id)?;
        let dlp = Uniform.log_derivative(v, &cell);
        let ends: Vec<(f64, Snapshot)> = border_points(&path, &cell)?
            .iter()
            .map(|ep| Ok((ep.sign * Uniform.density(ep.time, &cell), collapse(model, &path, cell.var_id, ep)?)))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(cells);
        for f in DUALITY_F {
            for u in DUALITY_U {
                let fj = f.jet(&snap, cell.var_id)?;
                let uj = u.jet(&snap, cell.var_id)?;
                let mut border = CompensatedSum::new();
                for (w, s) in &ends {
                    border.add(w * f.jet(s, cell.var_id)?.v * u.jet(s, cell.var_id)?.v);
                }
                out.push(uj.v * fj.d1 + fj.v * (uj.d1 + uj.v * dlp) - border.value());
            }
        }
        Ok::<_, Error>((true, out))
    })?;
    let mut stats = vec![RunningStats::new(); cells];
    let mut inside = 0u64;
    for (g, vals) in &per_path {
        inside += *g as u64;
        for (s, v) in stats.iter_mut().zip(vals) {
            s.push(*v);
        }
    }
    let mut rows = Vec::with_capacity(cells);
    for (i, f) in DUALITY_F.iter().enumerate() {
        for (j, u) in DUALITY_U.iter().enumerate() {
            let s = &stats[i * DUALITY_U.len() + j];
            rows.push(DualityRow {
                f: *f,
                u: *u,
                mean: s.mean(),
                stderr: s.stderr(),
                pass: s.mean().abs() <= 3.0 * s.stderr() + 1e-10,
            });
        }
    }
    Ok(DualityTable { rows, gamma_coverage: inside as f64 / cfg.paths as f64, paths: cfg.paths })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityRow {
    pub y: f64,
    /// Absolute bandwidth.
    pub eps: f64,
    /// Logistic-kernel density over all paths.
    pub kde: f64,
    pub kde_se: f64,
    /// Same kernel restricted to `Gamma`.
    pub direct: f64,
    pub direct_se: f64,
    /// IBP estimate of `E[1_Gamma phi_eps'(X_t - y)]` using only `phi_eps`.
    pub ibp: f64,
    pub ibp_se: f64,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityIntegral {
    pub eps: f64,
    /// Trapezoid integral of the IBP estimate over the y grid.
    pub integral: f64,
    pub stderr: f64,
    pub gamma_coverage: f64,
    pub gamma_se: f64,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub rows: Vec<DensityRow>,
    /// Per `y`: largest deviation between IBP estimates across bandwidths.
    pub consistency: Vec<(f64, f64)>,
    pub integrals: Vec<DensityIntegral>,
    pub sample_sd: f64,
}

fn trapezoid(ys: &[f64], vals: impl Fn(usize) -> f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for i in 1..ys.len() {
        acc.add(0.5 * (ys[i] - ys[i - 1]) * (vals(i) + vals(i - 1)));
    }
    acc.value()
}

/// Density of `X_t` on `y_grid` by the logistic kernel and by level-1 IBP
/// with the smooth step `phi_eps(x - y)`. Bandwidths are multiples of the
/// sample standard deviation of `X_t`.
pub fn density_estimate(
    model: &Model,
    measure: &IntensityMeasure,
    cfg: &RunConfig,
    y_grid: &[f64],
    rel_bandwidths: &[f64],
) -> Result<DensityTable> {
    if rel_bandwidths.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::domain("bandwidths must be positive"));
    }
    if y_grid.is_empty() {
        return Err(Error::domain("y grid is empty"));
    }
    let sd = terminal_values(model, measure, cfg)?.into_iter().collect::<RunningStats>().variance().sqrt();
    let eps: Vec<f64> = rel_bandwidths.iter().map(|b| b * sd.max(f64::MIN_POSITIVE)).collect();
    let phis: Vec<TestFunction> =
        eps.iter().flat_map(|&e| y_grid.iter().map(move |&y| TestFunction::Sigmoid { center: y, eps: e })).collect();
    let k = phis.len();
    let sampler = cfg.sampler(measure)?;
    // per path: gamma flag, kernel values, ibp values
    let per_path = map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, _) = cfg.sample(&sampler, p)?;
        let blocks = build_blocks_from_events(&events, cfg.t, 1)?;
        let cell = blocks.active_cell(0);
        let path = solve_path(model, events, cfg.t)?;
        let x = path.terminal();
        let kern: Vec<f64> = phis.iter().map(|f| f.eval(x)[1]).collect();
        let ibp = match &cell {
            Some(c) => ibp_path_l1(model, &path, c, Functional::One, &phis)?,
            None => vec![0.0; k],
        };
        Ok::<_, Error>((cell.is_some(), kern, ibp))
    })?;

    let mut kde = vec![RunningStats::new(); k];
    let mut direct = vec![RunningStats::new(); k];
    let mut ibp = vec![RunningStats::new(); k];
    let mut gamma = RunningStats::new();
    let mut integral = vec![RunningStats::new(); eps.len()];
    let ny = y_grid.len();
    for (g, kern, iv) in &per_path {
        gamma.push(*g as u8 as f64);
        for j in 0..k {
            kde[j].push(kern[j]);
            direct[j].push(if *g { kern[j] } else { 0.0 });
            ibp[j].push(iv[j]);
        }
        for (e, s) in integral.iter_mut().enumerate() {
            s.push(trapezoid(y_grid, |i| iv[e * ny + i]));
        }
    }
    let mut rows = Vec::with_capacity(k);
    for (e, &ep) in eps.iter().enumerate() {
        for (i, &y) in y_grid.iter().enumerate() {
            let j = e * ny + i;
            let (d, dse, b, bse) = (direct[j].mean(), direct[j].stderr(), ibp[j].mean(), ibp[j].stderr());
            rows.push(DensityRow {
                y,
                eps: ep,
                kde: kde[j].mean(),
                kde_se: kde[j].stderr(),
                direct: d,
                direct_se: dse,
                ibp: b,
                ibp_se: bse,
                agree: (d - b).abs() <= 3.0 * dse.hypot(bse),
            });
        }
    }
    let consistency = (0..ny)
        .map(|i| {
            let vals: Vec<f64> = (0..eps.len()).map(|e| ibp[e * ny + i].mean()).collect();
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            (y_grid[i], hi - lo)
        })
        .collect();
    let integrals = eps
        .iter()
        .zip(&integral)
        .map(|(&e, s)| DensityIntegral {
            eps: e,
            integral: s.mean(),
            stderr: s.stderr(),
            gamma_coverage: gamma.mean(),
            gamma_se: gamma.stderr(),
            agree: (s.mean() - gamma.mean()).abs() <= 3.0 * s.stderr().hypot(gamma.stderr()),
        })
        .collect();
    Ok(DensityTable { rows, consistency, integrals, sample_sd: sd })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub n: usize,
    pub levels: usize,
    pub mass: f64,
    /// `L exp(-mu(E_n) t / (2 L))`.
    pub bound: f64,
    /// Empirical frequency of the complement of `Gamma`.
    pub empirical: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Empirical `P(Gamma^c)` against its exponential bound for each `(n, L)`.
pub fn coverage_study(
    measure: &IntensityMeasure,
    t: f64,
    grid: &[(usize, usize)],
    paths: u64,
    seed: u64,
    chunk_size: u64,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(n, levels) in grid {
        let cfg = RunConfig { t, n, truncation: n, levels, paths, seed, chunk_size, g: Functional::One };
        let sampler = cfg.sampler(measure)?;
        let miss = map_paths(paths, chunk_size, |p| {
            let (events, _) = cfg.sample(&sampler, p)?;
            Ok::<_, Error>(build_blocks_from_events(&events, t, levels)?.active_cells().is_none())
        })?;
        let count = miss.iter().filter(|m| **m).count() as f64;
        let mf = paths as f64;
        let p = count / mf;
        let stderr = (p * (1.0 - p) / mf).sqrt();
        let mass = measure.mass(n)?;
        let lf = levels as f64;
        let bound = lf * (-mass * t / (2.0 * lf)).exp();
        rows.push(CoverageRow { n, levels, mass, bound, empirical: p, stderr, pass: p <= bound + 3.0 * stderr });
    }
    Ok(rows)
}

/// Pathwise bound checks over a Monte Carlo run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundStudy {
    pub paths: u64,
    pub events_checked: u64,
    /// `|U_k| < gamma_n` for some `E_n` event.
    pub gamma_violations: u64,
    /// Violations of `|U_k| >= e^{-g_bar t} gamma_n`.
    pub gamma_corrected_violations: u64,
    /// Violations of `|U_k| >= e^{-2 N_t(c_bar)} alpha_lower(a_k)`.
    pub product_violations: u64,
    pub growth_violations: u64,
    pub apriori_violations: u64,
    /// Violations of `|Y_t| <= e^{g_bar t} prod (1 + c_bar(a_k))`.
    pub tangent_violations: u64,
    pub p_norm_violations: u64,
    pub gamma_paths: u64,
    /// Largest `|Y Z - 1|` seen.
    pub max_product_defect: f64,
    /// Smallest `|U_k| / gamma_n` over `E_n` events.
    pub min_gamma_ratio: f64,
}

/// Checks of the a priori, tangent-flow, growth and lower bounds, and of the
/// `|p|_0` bound on `Gamma`, on every simulated path.
pub fn bound_study(model: &Model, measure: &IntensityMeasure, cfg: &RunConfig) -> Result<BoundStudy> {
    let sampler = cfg.sampler(measure)?;
    let per_path = map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, _) = cfg.sample(&sampler, p)?;
        let blocks = build_blocks_from_events(&events, cfg.t, cfg.levels)?;
        let path = solve_path(model, events, cfg.t)?;
        let tf = TangentFlow::new(model, &path)?;
        let mut s = BoundStudy { paths: 1, min_gamma_ratio: f64::INFINITY, ..Default::default() };
        let g = gamma_n(model, &path);
        let gc = gamma_n_drift_corrected(model, &path);
        let n_c = nt_functional(&path, |a| model.c_bar(a), false);
        for (k, e) in path.events().iter().enumerate() {
            let u = tf.first(k).abs();
            s.events_checked += 1;
            if e.in_en {
                s.gamma_violations += (u < g) as u64;
                s.gamma_corrected_violations += (u < gc) as u64;
                s.min_gamma_ratio = s.min_gamma_ratio.min(u / g);
            }
            s.product_violations += (u < (-2.0 * n_c).exp() * model.alpha_lower(e.mark)) as u64;
            s.growth_violations += (u > growth_bound(model, &path, k)) as u64;
        }
        s.apriori_violations += (path.stats().sup_abs > apriori_bound(model, &path)) as u64;
        let y_bound =
            (model.g_bar() * cfg.t).exp() * path.events().iter().map(|e| 1.0 + model.c_bar(e.mark)).product::<f64>();
        s.tangent_violations += (tf.y_t.abs() > y_bound * (1.0 + 1e-12)) as u64;
        s.max_product_defect = tf.product_defect();
        if blocks.active_cells().is_some() {
            s.gamma_paths = 1;
            let j = path.events().iter().filter(|e| e.in_en).count() as f64;
            let bound = 2.0 * cfg.levels as f64 / cfg.t * j;
            s.p_norm_violations += (p_norm_zero(&blocks)? > bound) as u64;
        }
        Ok::<_, Error>(s)
    })?;
    let mut total = BoundStudy { min_gamma_ratio: f64::INFINITY, ..Default::default() };
    for s in per_path {
        total.paths += s.paths;
        total.events_checked += s.events_checked;
        total.gamma_violations += s.gamma_violations;
        total.gamma_corrected_violations += s.gamma_corrected_violations;
        total.product_violations += s.product_violations;
        total.growth_violations += s.growth_violations;
        total.apriori_violations += s.apriori_violations;
        total.tangent_violations += s.tangent_violations;
        total.p_norm_violations += s.p_norm_violations;
        total.gamma_paths += s.gamma_paths;
        total.max_product_defect = total.max_product_defect.max(s.max_product_defect);
        total.min_gamma_ratio = total.min_gamma_ratio.min(s.min_gamma_ratio);
    }
    Ok(total)
}

/// Worst discrepancies between derivative routes over a Monte Carlo run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DerivativeStudy {
    pub paths: u64,
    pub events: u64,
    /// Direct recursion against the tangent product, first order.
    pub first_two_method: f64,
    /// Direct recursion against the tangent product, second order.
    pub second_two_method: f64,
    /// Analytic first derivative against differences of `X_t`.
    pub first_vs_fd: f64,
    /// Analytic second derivative against differences of analytic `U_k`.
    pub second_vs_fd: f64,
    /// Analytic mixed derivative of neighbouring events against differences.
    pub mixed_vs_fd: f64,
}

/// Denominator floor of the relative errors in [`derivative_study`], in
/// units of the first-order scale `(1 + |U_j|)(1 + |U_k|)`. Analytically
/// vanishing second derivatives are thereby compared in absolute terms.
pub const DERIVATIVE_FLOOR: f64 = 1e-4;

/// Relative errors `|a - b| / max(|a|, |b|, floor)` between the derivative
/// routes on every event of every path.
pub fn derivative_study(model: &Model, measure: &IntensityMeasure, cfg: &RunConfig) -> Result<DerivativeStudy> {
    let sampler = cfg.sampler(measure)?;
    let per_path = map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, _) = cfg.sample(&sampler, p)?;
        let path = solve_path(model, events, cfg.t)?;
        let tf = TangentFlow::new(model, &path)?;
        let mut s = DerivativeStudy { paths: 1, ..Default::default() };
        for k in 0..path.len() {
            s.events += 1;
            let u = crate::flow::first_derivative(model, &path, k)?;
            let w = crate::flow::second_derivative(model, &path, k)?;
            s.first_two_method = s.first_two_method.max(rel_err(u, tf.first(k), 1e-12));
            let scale = |j: usize| 1.0 + tf.first(j).abs();
            let floor2 = DERIVATIVE_FLOOR * scale(k) * scale(k);
            s.second_two_method = s.second_two_method.max(rel_err(w, tf.second(k), floor2));
            let fd1 = mixed_fd_with_step(model, &path, &[(k, 1)], FdBase::Value, 1e-6)?;
            s.first_vs_fd = s.first_vs_fd.max(rel_err(tf.first(k), fd1, DERIVATIVE_FLOOR * scale(k)));
            let fd2 = mixed_fd(model, &path, &[(k, 1)], FdBase::First(k))?;
            s.second_vs_fd = s.second_vs_fd.max(rel_err(tf.second(k), fd2, floor2));
            if k + 1 < path.len() {
                let fdm = mixed_fd(model, &path, &[(k, 1)], FdBase::First(k + 1))?;
                let floor = DERIVATIVE_FLOOR * scale(k) * scale(k + 1);
                s.mixed_vs_fd = s.mixed_vs_fd.max(rel_err(tf.mixed(k, k + 1), fdm, floor));
            }
        }
        Ok::<_, Error>(s)
    })?;
    let mut total = DerivativeStudy::default();
    for s in per_path {
        total.paths += s.paths;
        total.events += s.events;
        total.first_two_method = total.first_two_method.max(s.first_two_method);
        total.second_two_method = total.second_two_method.max(s.second_two_method);
        total.first_vs_fd = total.first_vs_fd.max(s.first_vs_fd);
        total.second_vs_fd = total.second_vs_fd.max(s.second_vs_fd);
        total.mixed_vs_fd = total.mixed_vs_fd.max(s.mixed_vs_fd);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub truncation: usize,
    pub mean: f64,
    pub stderr: f64,
    pub modulus: f64,
}

/// `E[X_t^N]` and `|E exp(i xi X_t^N)|` for increasing truncation levels `N`.
pub fn truncation_sweep(
    model: &Model,
    measure: &IntensityMeasure,
    cfg: &RunConfig,
    truncations: &[usize],
    xi: f64,
) -> Result<Vec<SweepRow>> {
    truncations
        .iter()
        .map(|&big_n| {
            let c = RunConfig { n: big_n, truncation: big_n, ..cfg.clone() };
            let xs = terminal_values(model, measure, &c)?;
            let stats: RunningStats = xs.iter().copied().collect();
            let (re, im) = xs.iter().fold((CompensatedSum::new(), CompensatedSum::new()), |(mut a, mut b), x| {
                let (s, co) = (xi * x).sin_cos();
                a.add(co);
                b.add(s);
                (a, b)
            });
            let m = xs.len() as f64;
            Ok(SweepRow {
                truncation: big_n,
                mean: stats.mean(),
                stderr: stats.stderr(),
                modulus: (re.value() / m).hypot(im.value() / m),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightTrendRow {
    pub n: usize,
    pub gamma_coverage: f64,
    pub mean_abs_h: f64,
    /// Median over `Gamma` of `gamma_n^{-3} (1 + N_t(c_bar))`.
    pub median_envelope: f64,
}

/// Weight magnitudes against the `gamma_n` envelope for increasing `n`.
/// Diagnostic only: the envelope constants are unknown.
pub fn weight_trend(
    model: &Model,
    measure: &IntensityMeasure,
    cfg: &RunConfig,
    n_list: &[usize],
) -> Result<Vec<WeightTrendRow>> {
    n_list
        .iter()
        .map(|&n| {
            let c = RunConfig { n, truncation: n.max(cfg.truncation), levels: 1, ..cfg.clone() };
            let sampler = c.sampler(measure)?;
            let per = map_paths(c.paths, c.chunk_size, |p| {
                let (events, _) = c.sample(&sampler, p)?;
                let blocks = build_blocks_from_events(&events, c.t, 1)?;
                let Some(cell) = blocks.active_cell(0) else {
                    return Ok(None);
                };
                let path = solve_path(model, events, c.t)?;
                let snap = Snapshot::new(model, path.clone())?;
                let h = crate::ibp::weight_h(&snap, &cell, Functional::Terminal, Functional::One, &Uniform)?;
                let env = gamma_n(model, &path).powi(-3) * (1.0 + nt_functional(&path, |a| model.c_bar(a), false));
                Ok::<_, Error>(Some((h.abs(), env)))
            })?;
            let on: Vec<(f64, f64)> = per.into_iter().flatten().collect();
            let mut envs: Vec<f64> = on.iter().map(|x| x.1).collect();
            envs.sort_by(f64::total_cmp);
            let median_envelope = if envs.is_empty() { f64::NAN } else { envs[envs.len() / 2] };
            Ok(WeightTrendRow {
                n,
                gamma_coverage: on.len() as f64 / c.paths as f64,
                mean_abs_h: on.iter().map(|x| x.0).collect::<RunningStats>().mean(),
                median_envelope,
            })
        })
        .collect()
}
