//! Intensity measures on the mark space with an exhaustion `E_n`, and Poisson
//! point measure sampling on `(0, t] x E_n`.
//!
//! All measures here are purely atomic: atoms `(a_k, w_k)` indexed from 1 in
//! strictly decreasing mark order, with `E_n` the first `n` atoms. For the
//! built-in family `mu_lambda`, `a_k = 1/k` and `w_k = k^(-lambda)`, so
//! `E_n = [1/n, 1]`.

use std::fmt;

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::numerics::{CompensatedSum, RunningStats};
use crate::rng::PathRng;

#[derive(Clone, Debug, PartialEq)]
enum Atoms {
    PowerLaw { lambda: f64 },
    Table(Vec<(f64, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityMeasure {
    atoms: Atoms,
    description: String,
}

impl fmt::Display for IntensityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description)
    }
}

impl IntensityMeasure {
    /// `mu_lambda = sum_k k^(-lambda) delta_{1/k}`, `0 < lambda <= 1`.
    pub fn mu_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::domain(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        Ok(IntensityMeasure { atoms: Atoms::PowerLaw { lambda }, description: format!("mu_lambda(lambda={lambda})") })
    }

    /// Finite atom table; marks must be positive and strictly decreasing,
    /// weights positive.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("atom table is empty"));
        }
        for (i, &(a, w)) in atoms.iter().enumerate() {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::domain(format!("atom {}: mark {a} is not a positive number", i + 1)));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::domain(format!("atom {}: weight {w} is not a positive number", i + 1)));
            }
            if i > 0 && a >= atoms[i - 1].0 {
                return Err(Error::domain(format!("atom {}: marks must be strictly decreasing", i + 1)));
            }
        }
        let description = format!("table({} atoms)", atoms.len());
        Ok(IntensityMeasure { atoms: Atoms::Table(atoms), description })
    }

    /// Parse the two-column `mark weight` text format. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::domain(format!("line {}: expected `mark weight`", lineno + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::domain(format!("line {}: cannot parse `{s}`", lineno + 1)))
            };
            atoms.push((parse(cols[0])?, parse(cols[1])?));
        }
        Self::from_atoms(atoms)
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.atoms {
            Atoms::PowerLaw { lambda } => Some(lambda),
            Atoms::Table(_) => None,
        }
    }

    /// Number of atoms, `None` for infinitely many.
    pub fn atom_count(&self) -> Option<usize> {
        match &self.atoms {
            Atoms::PowerLaw { .. } => None,
            Atoms::Table(t) => Some(t.len()),
        }
    }

    /// Atom `k` (1-based) as `(mark, weight)`.
    pub fn atom(&self, k: usize) -> Option<(f64, f64)> {
        if k == 0 {
            return None;
        }
        match &self.atoms {
            Atoms::PowerLaw { lambda } => {
                let kf = k as f64;
                let w = if *lambda == 1.0 { 1.0 / kf } else { kf.powf(-lambda) };
                Some((1.0 / kf, w))
            }
            Atoms::Table(t) => t.get(k - 1).copied(),
        }
    }

    /// Number of atoms in `E_n`.
    pub fn exhaustion_len(&self, n: usize) -> usize {
        match self.atom_count() {
            Some(len) => n.min(len),
            None => n,
        }
    }

    fn check_level(n: usize) -> Result<()> {
        if n == 0 {
            Err(Error::domain("exhaustion level n must be >= 1"))
        } else {
            Ok(())
        }
    }

    fn atoms_in(&self, n: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (1..=self.exhaustion_len(n)).map(move |k| {
            let (a, w) = self.atom(k).expect("atom within exhaustion");
            (k, a, w)
        })
    }

    /// `mu(E_n)`.
    pub fn mass(&self, n: usize) -> Result<f64> {
        Self::check_level(n)?;
        Ok(self.atoms_in(n).map(|(_, _, w)| w).collect::<CompensatedSum>().value())
    }

    /// `int_{E_n} f dmu`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, n: usize) -> Result<f64> {
        Self::check_level(n)?;
        let mut acc = CompensatedSum::new();
        for (k, a, w) in self.atoms_in(n) {
            let v = f(a);
            if !v.is_finite() {
                return Err(Error::Evaluation { atom: k, mark: a, value: v });
            }
            acc.add(v * w);
        }
        Ok(acc.value())
    }

    /// Largest observed increment `mu(E_{n+1}) - mu(E_n)` over `1 <= n < n_max`,
    /// i.e. the empirical exhaustion constant `K`.
    pub fn observed_increment(&self, n_max: usize) -> f64 {
        (2..=self.exhaustion_len(n_max)).filter_map(|k| self.atom(k).map(|(_, w)| w)).fold(0.0, f64::max)
    }

    /// `theta_n = ln(int_{E_n} 1/alpha_lower dmu) / mu(E_n)` for every requested `n`.
    pub fn theta_sequence<F: Fn(f64) -> f64>(&self, alpha_lower: F, n_list: &[usize]) -> Result<ThetaReport> {
        if n_list.is_empty() {
            return Err(Error::domain("theta_sequence needs at least one n"));
        }
        let mut ns: Vec<usize> = n_list.to_vec();
        ns.sort_unstable();
        ns.dedup();
        Self::check_level(ns[0])?;

        let mut mass = CompensatedSum::new();
        let mut integral = CompensatedSum::new();
        let mut k = 0usize;
        let mut rows = Vec::with_capacity(ns.len());
        for &n in &ns {
            let upto = self.exhaustion_len(n);
            while k < upto {
                k += 1;
                let (a, w) = self.atom(k).expect("atom within exhaustion");
                let inv = 1.0 / alpha_lower(a);
                if !inv.is_finite() || inv < 0.0 {
                    return Err(Error::Evaluation { atom: k, mark: a, value: inv });
                }
                mass.add(w);
                integral.add(inv * w);
            }
            let (m, i) = (mass.value(), integral.value());
            rows.push(ThetaRow { n, mass: m, integral: i, theta: i.ln() / m });
        }

        let mut tail_min = vec![f64::INFINITY; rows.len()];
        let mut running = f64::INFINITY;
        for (j, row) in rows.iter().enumerate().rev() {
            running = running.min(row.theta);
            tail_min[j] = running;
        }
        let n_max = *ns.last().unwrap();
        let liminf_proxy = rows.iter().filter(|r| r.n * 10 >= n_max).map(|r| r.theta).fold(f64::INFINITY, f64::min);
        Ok(ThetaReport { rows, tail_min, liminf_proxy })
    }

    /// `int_{a <= u} a^2 dmu(a)`. Infinite tails of `mu_lambda` are summed
    /// directly for 1000 terms and closed with an Euler-Maclaurin remainder,
    /// which keeps the relative truncation error far below 1e-12.
    pub fn ik_tail_integral(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::domain(format!("u must lie in (0, 1], got {u}")));
        }
        match &self.atoms {
            Atoms::Table(t) => {
                Ok(t.iter().filter(|(a, _)| *a <= u).map(|(a, w)| a * a * w).collect::<CompensatedSum>().value())
            }
            Atoms::PowerLaw { lambda } => {
                let s = 2.0 + lambda;
                let inv = 1.0 / u;
                let k0 = (inv * (1.0 - 1e-12)).ceil().max(1.0);
                const DIRECT: usize = 1000;
                let mut acc = CompensatedSum::new();
                for j in 0..DIRECT {
                    acc.add((k0 + j as f64).powf(-s));
                }
                let big_k = k0 + DIRECT as f64;
                let f = big_k.powf(-s);
                let f1 = -s * big_k.powf(-s - 1.0);
                let f3 = -s * (s + 1.0) * (s + 2.0) * big_k.powf(-s - 3.0);
                let remainder = big_k.powf(1.0 - s) / (s - 1.0) + f / 2.0 - f1 / 12.0 + f3 / 720.0;
                acc.add(remainder);
                Ok(acc.value())
            }
        }
    }

    /// `alpha_f(s) = int_{E_n} (1 - exp(-s f(a))) dmu(a)`.
    pub fn laplace_exponent<F: Fn(f64) -> f64>(&self, f: F, s: f64, n: usize) -> Result<f64> {
        self.integrate(|a| -(-s * f(a)).exp_m1(), n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaRow {
    pub n: usize,
    pub mass: f64,
    pub integral: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaReport {
    /// One row per distinct requested `n`, ascending.
    pub rows: Vec<ThetaRow>,
    /// `min_{j >= i} theta_{n_j}` for each row `i`.
    pub tail_min: Vec<f64>,
    /// Minimum of `theta_n` over the largest decade of requested `n`.
    pub liminf_proxy: f64,
}

/// A point of the Poisson point measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedPoint {
    pub time: f64,
    pub mark: f64,
    /// 1-based atom index of the mark.
    pub atom: usize,
    pub in_en: bool,
}

/// Sampler for the Poisson point measure restricted to `(0, t] x E_N`, with
/// inverse-CDF mark sampling over the precomputed atom table of `E_N`.
#[derive(Clone, Debug)]
pub struct PoissonSampler {
    truncation: usize,
    marks: Vec<f64>,
    cdf: Vec<f64>,
    mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpmSample {
    pub points: Vec<MarkedPoint>,
    /// Number of redraws caused by coinciding jump times.
    pub resampled: u32,
}

impl PoissonSampler {
    pub fn new(measure: &IntensityMeasure, truncation: usize) -> Result<Self> {
        IntensityMeasure::check_level(truncation)?;
        let len = measure.exhaustion_len(truncation);
        let mut marks = Vec::with_capacity(len);
        let mut cdf = Vec::with_capacity(len);
        let mut acc = CompensatedSum::new();
        for k in 1..=len {
            let (a, w) = measure.atom(k).expect("atom within exhaustion");
            acc.add(w);
            marks.push(a);
            cdf.push(acc.value());
        }
        let mass = acc.value();
        Ok(PoissonSampler { truncation, marks, cdf, mass })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Draw the points on `(0, t]`; points with atom index `<= n_inner` are
    /// flagged as lying in `E_n`.
    pub fn sample(&self, t: f64, n_inner: usize, rng: &mut PathRng) -> Result<PpmSample> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {t}")));
        }
        let rate = t * self.mass;
        let mut resampled = 0;
        loop {
            let count = if rate > 0.0 {
                let pois = Poisson::new(rate).map_err(|e| Error::domain(e.to_string()))?;
                pois.sample(rng) as usize
            } else {
                0
            };
            let mut times: Vec<f64> = (0..count).map(|_| t * rng.open01()).collect();
            times.sort_by(f64::total_cmp);
            if times.windows(2).any(|w| w[0] == w[1]) {
                resampled += 1;
                continue;
            }
            let points = times
                .into_iter()
                .map(|time| {
                    let x = rng.open01() * self.mass;
                    let idx = self.cdf.partition_point(|&c| c < x).min(self.marks.len() - 1);
                    MarkedPoint { time, mark: self.marks[idx], atom: idx + 1, in_en: idx < n_inner }
                })
                .collect();
            return Ok(PpmSample { points, resampled });
        }
    }
}

/// Sample the Poisson point measure on `(0, t] x E_n`.
pub fn sample_ppm(measure: &IntensityMeasure, t: f64, n: usize, rng: &mut PathRng) -> Result<Vec<MarkedPoint>> {
    Ok(PoissonSampler::new(measure, n)?.sample(t, n, rng)?.points)
}

/// `N_t(f)` over a list of points.
pub fn additive_functional<F: Fn(f64) -> f64>(points: &[MarkedPoint], f: F) -> f64 {
    points.iter().map(|p| f(p.mark)).collect::<CompensatedSum>().value()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceCheck {
    pub empirical: f64,
    pub analytic: f64,
    pub stderr: f64,
    pub paths: u64,
    /// Set when fewer than 100 paths were used.
    pub low_path_warning: bool,
}

impl LaplaceCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        (self.empirical - self.analytic).abs() <= sigmas * self.stderr + 1e-12
    }
}

/// Compare the empirical Laplace transform of `N_t(f)` on `E_n` with
/// `exp(-t alpha_f(s))`.
pub fn laplace_check<F: Fn(f64) -> f64 + Sync>(
    measure: &IntensityMeasure,
    f: F,
    s: f64,
    t: f64,
    n: usize,
    paths: u64,
    seed: u64,
) -> Result<LaplaceCheck> {
    for k in 1..=measure.exhaustion_len(n) {
        let (a, _) = measure.atom(k).expect("atom within exhaustion");
        let v = f(a);
        if !(v >= 0.0) {
            return Err(Error::Evaluation { atom: k, mark: a, value: v });
        }
    }
    let analytic = (-t * measure.laplace_exponent(&f, s, n)?).exp();
    let sampler = PoissonSampler::new(measure, n)?;
    let values = crate::numerics::map_paths(paths, 4096, |p| {
        let mut rng = PathRng::for_path(seed, p);
        let pts = sampler.sample(t, n, &mut rng)?.points;
        Ok::<_, Error>((-s * additive_functional(&pts, &f)).exp())
    })?;
    let stats: RunningStats = values.into_iter().collect();
    Ok(LaplaceCheck { empirical: stats.mean(), analytic, stderr: stats.stderr(), paths, low_path_warning: paths < 100 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn mass_examples() {
        for lambda in [0.3, 0.5, 1.0] {
            assert_eq!(IntensityMeasure::mu_lambda(lambda).unwrap().mass(1).unwrap(), 1.0);
        }
        let m1 = IntensityMeasure::mu_lambda(1.0).unwrap();
        assert!(close(m1.mass(3).unwrap(), 11.0 / 6.0, 1e-15));
        let mh = IntensityMeasure::mu_lambda(0.5).unwrap();
        let hand = 1.0 + 2f64.powf(-0.5) + 3f64.powf(-0.5) + 0.5;
        assert!(close(mh.mass(4).unwrap(), hand, 1e-15));
        assert!((mh.mass(4).unwrap() - 2.784457).abs() < 1e-6);
        assert!(matches!(m1.mass(0), Err(Error::Domain(_))));
    }

    #[test]
    fn integrate_examples() {
        let m1 = IntensityMeasure::mu_lambda(1.0).unwrap();
        assert!(close(m1.integrate(|a| 1.0 / a, 5).unwrap(), 5.0, 1e-14));
        assert_eq!(m1.integrate(|_| 0.0, 7).unwrap(), 0.0);
        let lambda = 0.5;
        let m = IntensityMeasure::mu_lambda(lambda).unwrap();
        let expected: f64 = (1..=20).map(|k| (k as f64).powf(1.0 - lambda)).sum();
        assert!(close(m.integrate(|a| 1.0 / a, 20).unwrap(), expected, 1e-14));
        let err = m.integrate(|a| if a < 0.3 { f64::NAN } else { a }, 5).unwrap_err();
        assert!(matches!(err, Error::Evaluation { atom: 4, .. }));
    }

    #[test]
    fn theta_examples() {
        let mh = IntensityMeasure::mu_lambda(0.5).unwrap();
        let rep = mh.theta_sequence(|a| a, &[10_000]).unwrap();
        // ln(sum k^{1/2}) / sum k^{-1/2}, k <= 1e4, by brute-force sums
        let (s1, s2) = (1..=10_000u32).fold((0.0f64, 0.0f64), |(x, y), k| {
            let k = k as f64;
            (x + k.sqrt(), y + 1.0 / k.sqrt())
        });
        assert!(close(rep.rows[0].theta, s1.ln() / s2, 1e-12));
        assert!((rep.rows[0].theta - 0.067).abs() < 1e-3);
        assert!(mh.theta_sequence(|a| a, &[]).is_err());
    }

    #[test]
    fn theta_tail_min_and_proxy() {
        let m1 = IntensityMeasure::mu_lambda(1.0).unwrap();
        let rep = m1.theta_sequence(|a| a, &[10, 100, 1000, 200, 50]).unwrap();
        let ns: Vec<usize> = rep.rows.iter().map(|r| r.n).collect();
        assert_eq!(ns, vec![10, 50, 100, 200, 1000]);
        for (i, r) in rep.rows.iter().enumerate() {
            let direct = m1.integrate(|a| 1.0 / a, r.n).unwrap().ln() / m1.mass(r.n).unwrap();
            assert!(close(r.theta, direct, 1e-13));
            let tm = rep.rows[i..].iter().map(|r| r.theta).fold(f64::INFINITY, f64::min);
            assert_eq!(rep.tail_min[i], tm);
        }
        let top = rep.rows.iter().filter(|r| r.n >= 100).map(|r| r.theta).fold(f64::INFINITY, f64::min);
        assert_eq!(rep.liminf_proxy, top);
    }

    #[test]
    fn tail_integral_examples() {
        let m1 = IntensityMeasure::mu_lambda(1.0).unwrap();
        // brute-force tail sum over k >= 2 of k^-3, the remainder past 2e6 is ~1.2e-13
        let brute: f64 = (2..2_000_000u64).rev().map(|k| (k as f64).powi(-3)).sum();
        let v = m1.ik_tail_integral(0.5).unwrap();
        assert!(close(v, brute, 1e-12), "{v} vs {brute}");
        assert!((m1.ik_tail_integral(0.5).unwrap() - 0.202057).abs() < 1e-6);
        // u = 1 is the whole second moment
        let whole: f64 = 1.0 + brute;
        assert!(close(m1.ik_tail_integral(1.0).unwrap(), whole, 1e-12));
        assert!(m1.ik_tail_integral(0.0).is_err());
    }

    #[test]
    fn tail_integral_scaling() {
        for lambda in [0.5, 1.0] {
            let m = IntensityMeasure::mu_lambda(lambda).unwrap();
            let mut last = f64::INFINITY;
            for u in [1e-2, 1e-3, 1e-4] {
                let ratio = m.ik_tail_integral(u).unwrap() * (1.0 + lambda) / u.powf(1.0 + lambda);
                let dev = (ratio - 1.0).abs();
                assert!(dev < last);
                last = dev;
            }
            assert!(last < 1e-3);
        }
    }

    #[test]
    fn table_measure() {
        let m = IntensityMeasure::parse_table("# mark weight\n0.9 1.0\n0.5 2.0\n\n0.1 0.5\n").unwrap();
        assert_eq!(m.atom_count(), Some(3));
        assert_eq!(m.mass(2).unwrap(), 3.0);
        assert_eq!(m.mass(10).unwrap(), 3.5);
        assert!(close(m.ik_tail_integral(0.5).unwrap(), 0.25 * 2.0 + 0.01 * 0.5, 1e-15));
        assert!(IntensityMeasure::parse_table("0.5 1\n0.6 1\n").is_err());
        assert!(IntensityMeasure::parse_table("0.5\n").is_err());
        assert!(IntensityMeasure::parse_table("0.5 -1\n").is_err());
    }

    #[test]
    fn exhaustion_increments() {
        for lambda in [0.25, 0.5, 1.0] {
            let m = IntensityMeasure::mu_lambda(lambda).unwrap();
            let k = m.observed_increment(10_000);
            assert!(k <= 1.0 && k > 0.0);
            let mut prev = 0.0;
            for n in 1..200 {
                let mass = m.mass(n).unwrap();
                assert!(mass > prev && mass - prev <= 1.0);
                prev = mass;
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = IntensityMeasure::mu_lambda(0.5).unwrap();
        let a = sample_ppm(&m, 2.0, 30, &mut PathRng::for_path(3, 11)).unwrap();
        let b = sample_ppm(&m, 2.0, 30, &mut PathRng::for_path(3, 11)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.iter().all(|p| p.time > 0.0 && p.time <= 2.0 && p.atom <= 30));
    }

    #[test]
    fn inner_flags_follow_atom_index() {
        let m = IntensityMeasure::mu_lambda(1.0).unwrap();
        let sampler = PoissonSampler::new(&m, 200).unwrap();
        let mut rng = PathRng::for_path(1, 1);
        for _ in 0..50 {
            for p in sampler.sample(1.0, 10, &mut rng).unwrap().points {
                assert_eq!(p.in_en, p.atom <= 10);
                assert!((p.mark - 1.0 / p.atom as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplace_trivial_cases() {
        let m = IntensityMeasure::mu_lambda(0.5).unwrap();
        let r = laplace_check(&m, |_| 0.0, 1.3, 1.0, 10, 200, 5).unwrap();
        assert_eq!(r.empirical, 1.0);
        assert_eq!(r.analytic, 1.0);
        let s: f64 = 0.7;
        let r = laplace_check(&m, |_| 1.0, s, 2.0, 10, 50, 5).unwrap();
        let expected = (-2.0 * m.mass(10).unwrap() * (1.0 - (-s).exp())).exp();
        assert!(close(r.analytic, expected, 1e-14));
        assert!(r.low_path_warning);
        assert!(laplace_check(&m, |a| a - 0.5, 1.0, 1.0, 5, 10, 1).is_err());
    }
}
