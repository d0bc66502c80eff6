//! Coefficient bundles for `dX = c(t, a, X-) dN(t, a) + g(t, X) dt`.
//!
//! A [`Model`] carries the jump coefficient `c`, the drift `g`, their partial
//! derivatives (up to third order in `x`), the envelopes `c_bar`, `g_bar` and
//! the lower envelope `alpha_lower` of the non-degeneracy function
//! `alpha(t,a,x) = g(t,x) - g(t,x+c) + g(t,x) c_x + c_t`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::IntensityMeasure;

/// `(t, a, x) -> value`
pub type JumpCoef = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, x) -> value`
pub type DriftCoef = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `a -> value`
pub type Envelope = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied coefficients. Any partial left as `None` is synthesized by
/// Richardson-extrapolated central differences of the next lower derivative.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub c: JumpCoef,
    pub c_x: Option<JumpCoef>,
    pub c_t: Option<JumpCoef>,
    pub c_xx: Option<JumpCoef>,
    pub c_tx: Option<JumpCoef>,
    pub c_tt: Option<JumpCoef>,
    pub c_xxx: Option<JumpCoef>,
    pub g: DriftCoef,
    pub g_x: Option<DriftCoef>,
    pub g_t: Option<DriftCoef>,
    pub g_xx: Option<DriftCoef>,
    pub g_xxx: Option<DriftCoef>,
}

impl CustomCoefficients {
    pub fn new(
        c: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomCoefficients {
            c: Arc::new(c),
            c_x: None,
            c_t: None,
            c_xx: None,
            c_tx: None,
            c_tt: None,
            c_xxx: None,
            g: Arc::new(g),
            g_x: None,
            g_t: None,
            g_xx: None,
            g_xxx: None,
        }
    }

    /// Names of the partials that will be FD-synthesized.
    pub fn synthesized(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let jump = [
            ("c_x", &self.c_x),
            ("c_t", &self.c_t),
            ("c_xx", &self.c_xx),
            ("c_tx", &self.c_tx),
            ("c_tt", &self.c_tt),
            ("c_xxx", &self.c_xxx),
        ];
        v.extend(jump.iter().filter(|(_, f)| f.is_none()).map(|(n, _)| *n));
        let drift = [("g_x", &self.g_x), ("g_t", &self.g_t), ("g_xx", &self.g_xx), ("g_xxx", &self.g_xxx)];
        v.extend(drift.iter().filter(|(_, f)| f.is_none()).map(|(n, _)| *n));
        v
    }
}

#[derive(Clone)]
enum Kind {
    /// `c = a`, `g = b x + g0`
    Affine {
        b: f64,
        g0: f64,
    },
    /// `c = a x`, `g = 1`
    Geometric,
    Custom(Arc<CustomCoefficients>),
}

#[derive(Clone)]
pub struct Model {
    name: String,
    kind: Kind,
    x0: f64,
    c_bar: Envelope,
    g_bar: f64,
    alpha_lower: Envelope,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("g_bar", &self.g_bar)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuiltinParams {
    pub b: f64,
    pub g0: f64,
    pub x0: f64,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        BuiltinParams { b: 1.0, g0: 0.0, x0: 1.0 }
    }
}

// central difference step used when synthesizing partials
const SYNTH_STEP: f64 = 1e-3;

fn richardson<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

fn synth_step(x: f64) -> f64 {
    SYNTH_STEP * (1.0 + x.abs())
}

impl Model {
    /// `c(t,a,x) = a`, `g(t,x) = b x + g0`.
    pub fn translation(b: f64, g0: f64, x0: f64) -> Self {
        Model {
            name: "translation".into(),
            kind: Kind::Affine { b, g0 },
            x0,
            c_bar: Arc::new(|a: f64| a.abs()),
            g_bar: b.abs().max(g0.abs()),
            alpha_lower: Arc::new(move |a: f64| b.abs() * a.abs()),
        }
    }

    /// `c(t,a,x) = a`, `g(t,x) = b x`.
    pub fn linear_drift(b: f64, x0: f64) -> Self {
        let mut m = Self::translation(b, 0.0, x0);
        m.name = "linear_drift".into();
        m
    }

    /// `c(t,a,x) = a x`, `g = 1`.
    pub fn geometric(x0: f64) -> Self {
        Model {
            name: "geometric".into(),
            kind: Kind::Geometric,
            x0,
            c_bar: Arc::new(|a: f64| a.abs()),
            g_bar: 1.0,
            alpha_lower: Arc::new(|a: f64| a.abs()),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        coefficients: CustomCoefficients,
        x0: f64,
        c_bar: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_bar: f64,
        alpha_lower: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Model {
            name: name.into(),
            kind: Kind::Custom(Arc::new(coefficients)),
            x0,
            c_bar: Arc::new(c_bar),
            g_bar,
            alpha_lower: Arc::new(alpha_lower),
        }
    }

    /// Built-in model by name: `translation`, `linear_drift`, `geometric`.
    pub fn builtin(name: &str, params: BuiltinParams) -> Result<Self> {
        match name {
            "translation" => Ok(Self::translation(params.b, params.g0, params.x0)),
            "linear_drift" => Ok(Self::linear_drift(params.b, params.x0)),
            "geometric" => Ok(Self::geometric(params.x0)),
            "custom" => Err(Error::Unsupported("custom models are assembled from CustomCoefficients in code".into())),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_alpha_lower(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.alpha_lower = Arc::new(f);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn c_bar(&self, a: f64) -> f64 {
        (self.c_bar)(a)
    }

    pub fn g_bar(&self) -> f64 {
        self.g_bar
    }

    pub fn alpha_lower(&self, a: f64) -> f64 {
        (self.alpha_lower)(a)
    }

    /// Partials that are FD-synthesized rather than supplied.
    pub fn synthesized_partials(&self) -> Vec<&'static str> {
        match &self.kind {
            Kind::Custom(cc) => cc.synthesized(),
            _ => Vec::new(),
        }
    }

    pub fn c(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } => a,
            Kind::Geometric => a * x,
            Kind::Custom(cc) => (cc.c)(t, a, x),
        }
    }

    pub fn c_x(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } => 0.0,
            Kind::Geometric => a,
            Kind::Custom(cc) => match &cc.c_x {
                Some(f) => f(t, a, x),
                None => richardson(|y| (cc.c)(t, a, y), x, synth_step(x)),
            },
        }
    }

    pub fn c_t(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.c_t {
                Some(f) => f(t, a, x),
                None => richardson(|s| (cc.c)(s, a, x), t, synth_step(t)),
            },
        }
    }

    pub fn c_xx(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.c_xx {
                Some(f) => f(t, a, x),
                None => richardson(|y| self.c_x(t, a, y), x, synth_step(x)),
            },
        }
    }

    pub fn c_tx(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.c_tx {
                Some(f) => f(t, a, x),
                None => richardson(|s| self.c_x(s, a, x), t, synth_step(t)),
            },
        }
    }

    pub fn c_tt(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.c_tt {
                Some(f) => f(t, a, x),
                None => richardson(|s| self.c_t(s, a, x), t, synth_step(t)),
            },
        }
    }

    pub fn c_xxx(&self, t: f64, a: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.c_xxx {
                Some(f) => f(t, a, x),
                None => richardson(|y| self.c_xx(t, a, y), x, synth_step(x)),
            },
        }
    }

    pub fn g(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { b, g0 } => b * x + g0,
            Kind::Geometric => 1.0,
            Kind::Custom(cc) => (cc.g)(t, x),
        }
    }

    pub fn g_x(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { b, .. } => *b,
            Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.g_x {
                Some(f) => f(t, x),
                None => richardson(|y| (cc.g)(t, y), x, synth_step(x)),
            },
        }
    }

    pub fn g_t(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.g_t {
                Some(f) => f(t, x),
                None => richardson(|s| (cc.g)(s, x), t, synth_step(t)),
            },
        }
    }

    pub fn g_xx(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.g_xx {
                Some(f) => f(t, x),
                None => richardson(|y| self.g_x(t, y), x, synth_step(x)),
            },
        }
    }

    pub fn g_xxx(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            Kind::Affine { .. } | Kind::Geometric => 0.0,
            Kind::Custom(cc) => match &cc.g_xxx {
                Some(f) => f(t, x),
                None => richardson(|y| self.g_xx(t, y), x, synth_step(x)),
            },
        }
    }

    /// `g(t,x) - g(t, x + c(t,a,x)) + g(t,x) c_x(t,a,x) + c_t(t,a,x)`.
    pub fn alpha(&self, t: f64, a: f64, x: f64) -> f64 {
        match self.kind {
            Kind::Affine { b, .. } => -b * a,
            Kind::Geometric => a,
            Kind::Custom(_) => {
                let c = self.c(t, a, x);
                let g = self.g(t, x);
                g - self.g(t, x + c) + g * self.c_x(t, a, x) + self.c_t(t, a, x)
            }
        }
    }

    /// Time derivative of `alpha`.
    pub fn alpha_t(&self, t: f64, a: f64, x: f64) -> f64 {
        let c = self.c(t, a, x);
        let ct = self.c_t(t, a, x);
        let gt = self.g_t(t, x);
        gt - self.g_t(t, x + c) - self.g_x(t, x + c) * ct
            + gt * self.c_x(t, a, x)
            + self.g(t, x) * self.c_tx(t, a, x)
            + self.c_tt(t, a, x)
    }

    /// Space derivative of `alpha`.
    pub fn alpha_x(&self, t: f64, a: f64, x: f64) -> f64 {
        let c = self.c(t, a, x);
        let cx = self.c_x(t, a, x);
        let gx = self.g_x(t, x);
        gx - self.g_x(t, x + c) * (1.0 + cx) + gx * cx + self.g(t, x) * self.c_xx(t, a, x) + self.c_tx(t, a, x)
    }

    /// Compare every partial with a central difference of its parent (step
    /// `1e-5 (1 + |z|)`, one Richardson level) at the given `(t, a, x)` points.
    pub fn verify_partials(&self, points: &[(f64, f64, f64)]) -> Vec<PartialCheck> {
        type Pair<'m> =
            (&'static str, Box<dyn Fn(f64, f64, f64) -> f64 + 'm>, Box<dyn Fn(f64, f64, f64) -> f64 + 'm>, bool);
        let h = |z: f64| 1e-5 * (1.0 + z.abs());
        let pairs: Vec<Pair<'_>> = vec![
            ("c_x", Box::new(|t, a, x| self.c_x(t, a, x)), Box::new(|t, a, x| self.c(t, a, x)), true),
            ("c_t", Box::new(|t, a, x| self.c_t(t, a, x)), Box::new(|t, a, x| self.c(t, a, x)), false),
            ("c_xx", Box::new(|t, a, x| self.c_xx(t, a, x)), Box::new(|t, a, x| self.c_x(t, a, x)), true),
            ("c_tx", Box::new(|t, a, x| self.c_tx(t, a, x)), Box::new(|t, a, x| self.c_x(t, a, x)), false),
            ("c_tt", Box::new(|t, a, x| self.c_tt(t, a, x)), Box::new(|t, a, x| self.c_t(t, a, x)), false),
            ("c_xxx", Box::new(|t, a, x| self.c_xxx(t, a, x)), Box::new(|t, a, x| self.c_xx(t, a, x)), true),
            ("g_x", Box::new(|t, _, x| self.g_x(t, x)), Box::new(|t, _, x| self.g(t, x)), true),
            ("g_t", Box::new(|t, _, x| self.g_t(t, x)), Box::new(|t, _, x| self.g(t, x)), false),
            ("g_xx", Box::new(|t, _, x| self.g_xx(t, x)), Box::new(|t, _, x| self.g_x(t, x)), true),
            ("g_xxx", Box::new(|t, _, x| self.g_xxx(t, x)), Box::new(|t, _, x| self.g_xx(t, x)), true),
        ];
        pairs
            .into_iter()
            .map(|(name, analytic, parent, in_x)| {
                let mut worst = PartialCheck { name, max_rel_err: 0.0, witness: (0.0, 0.0, 0.0) };
                for &(t, a, x) in points {
                    let an = analytic(t, a, x);
                    let fd = if in_x {
                        richardson(|y| parent(t, a, y), x, h(x))
                    } else {
                        richardson(|s| parent(s, a, x), t, h(t))
                    };
                    let scale = an.abs().max(fd.abs());
                    let err = if scale < 1e-12 { 0.0 } else { (an - fd).abs() / scale };
                    if err > worst.max_rel_err {
                        worst.max_rel_err = err;
                        worst.witness = (t, a, x);
                    }
                }
                worst
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub witness: (f64, f64, f64),
}

/// Grid for the numerical spot checks of H1-H3.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisGrid {
    pub t_max: f64,
    pub t_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    /// Number of leading atoms of the measure used as marks.
    pub atoms: usize,
}

impl Default for HypothesisGrid {
    fn default() -> Self {
        HypothesisGrid { t_max: 1.0, t_points: 21, x_min: -10.0, x_max: 10.0, x_points: 41, atoms: 200 }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub id: &'static str,
    /// Smallest `rhs - lhs` over the grid; negative means violated.
    pub worst_margin: f64,
    pub witness: (f64, f64, f64),
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// First violation as a structured error.
    pub fn into_result(self) -> Result<Self> {
        if let Some(c) = self.checks.iter().find(|c| !c.passed) {
            let (t, a, x) = c.witness;
            return Err(Error::Hypothesis { id: c.id, t, a, x, margin: c.worst_margin });
        }
        Ok(self)
    }
}

pub const HYPOTHESIS_IDS: [&str; 6] =
    ["H1.c.growth", "H1.c.derivatives", "H1.g.growth", "H1.g.derivatives", "H2", "H3"];

/// Grid spot checks of H1 (growth and derivative envelopes), H2 (invertible
/// tangent flow) and H3 (`|alpha| >= alpha_lower > 0`).
pub fn check_hypotheses(model: &Model, measure: &IntensityMeasure, grid: &HypothesisGrid) -> HypothesisReport {
    let ts = linspace(0.0, grid.t_max, grid.t_points);
    let xs = linspace(grid.x_min, grid.x_max, grid.x_points);
    let marks: Vec<f64> =
        (1..=measure.exhaustion_len(grid.atoms)).filter_map(|k| measure.atom(k).map(|(a, _)| a)).collect();

    let mut checks: Vec<HypothesisCheck> = HYPOTHESIS_IDS
        .iter()
        .map(|&id| HypothesisCheck { id, worst_margin: f64::INFINITY, witness: (0.0, 0.0, 0.0), passed: true })
        .collect();
    let mut record = |slot: usize, margin: f64, scale: f64, w: (f64, f64, f64)| {
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        let c = &mut checks[slot];
        if margin < c.worst_margin {
            c.worst_margin = margin;
            c.witness = w;
        }
        if margin < -1e-12 * (1.0 + scale) {
            c.passed = false;
        }
    };

    let gb = model.g_bar();
    for &t in &ts {
        for &x in &xs {
            let g = model.g(t, x).abs();
            record(2, gb * (1.0 + x.abs()) - g, g, (t, f64::NAN, x));
            let dg = [model.g_x(t, x), model.g_t(t, x), model.g_xx(t, x), model.g_xxx(t, x)]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            record(3, gb - dg, dg, (t, f64::NAN, x));
            for &a in &marks {
                let cb = model.c_bar(a);
                let c = model.c(t, a, x).abs();
                record(0, cb * (1.0 + x.abs()) - c, c, (t, a, x));
                let cx = model.c_x(t, a, x);
                let dc = [
                    cx,
                    model.c_t(t, a, x),
                    model.c_xx(t, a, x),
                    model.c_tx(t, a, x),
                    model.c_tt(t, a, x),
                    model.c_xxx(t, a, x),
                ]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
                record(1, cb - dc, dc, (t, a, x));
                let h2 = if 1.0 + cx == 0.0 { f64::INFINITY } else { (cx / (1.0 + cx)).abs() };
                record(4, cb - h2, h2.min(1e300), (t, a, x));
                let al = model.alpha_lower(a);
                let alpha = model.alpha(t, a, x).abs();
                let margin = if al > 0.0 { alpha - al } else { f64::NEG_INFINITY };
                record(5, margin, alpha, (t, a, x));
            }
        }
    }
    HypothesisReport { checks }
}
