//! Integration by parts with respect to selected jump times.
//!
//! The horizon is cut into `L` blocks. In block `l` the jumps with marks in
//! `E_n` give times `T_{l,0} = t_{l-1} < T_{l,1} < ... < T_{l,m+1} = t_l`; the
//! odd-indexed times are the candidate variables, each living in the cell
//! between its even-indexed neighbours. Conditionally on everything else a
//! variable is uniform on its cell. The first cell wider than
//! `h = t / (2 L m)` is the active one, and only the active variable is
//! differentiated.
//!
//! On a cell the derivative `D` is `d/dv`, the divergence is
//! `delta(F) = D F + F D ln p` and the border term is
//! `[U] = (U p)(b-) - (U p)(a+)`, which gives the duality
//! `E[U D F] = -E[F delta(U)] + E[[F U]]`. When jumps outside `E_n` fall
//! inside the cell, the path functional is only piecewise smooth in the
//! variable; the border term then runs over every piece.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::flow::{mixed_fd, FdBase, TangentFlow};
use crate::model::Model;
use crate::numerics::{gauss_legendre, CompensatedSum, RunningStats};
use crate::rng::PathRng;
use crate::sde::{resolve_moved, solve_path, Event, JumpPath, Move};

/// Value with first and second derivative along the active variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn new(v: f64, d1: f64, d2: f64) -> Self {
        Jet { v, d1, d2 }
    }

    pub fn constant(v: f64) -> Self {
        Jet { v, d1: 0.0, d2: 0.0 }
    }

    pub fn variable(v: f64) -> Self {
        Jet { v, d1: 1.0, d2: 0.0 }
    }

    /// `f(self)` given `[f, f', f'']` at `self.v`.
    pub fn compose(self, f: [f64; 3]) -> Self {
        Jet { v: f[0], d1: f[1] * self.d1, d2: f[2] * self.d1 * self.d1 + f[1] * self.d2 }
    }

    pub fn recip(self) -> Self {
        let v = self.v;
        self.compose([1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)])
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Block `l` of the structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub start: f64,
    pub end: f64,
    /// `T_{l,0}, ..., T_{l,m+1}`.
    pub times: Vec<f64>,
    /// Event ids of `T_{l,1}, ..., T_{l,m}`.
    pub ids: Vec<usize>,
    pub h: f64,
    pub active: Option<usize>,
}

impl Level {
    /// Number of `E_n` jumps in the block.
    pub fn m(&self) -> usize {
        self.ids.len()
    }

    /// `n_l = floor((m - 1) / 2)`; `None` when `m = 0`.
    pub fn n_l(&self) -> Option<usize> {
        self.m().checked_sub(1).map(|k| k / 2)
    }

    /// Cell widths `T_{l,2i+2} - T_{l,2i}`, `0 <= i <= n_l`.
    pub fn gaps(&self) -> Vec<f64> {
        match self.n_l() {
            None => Vec::new(),
            Some(n) => (0..=n).map(|i| self.times[2 * i + 2] - self.times[2 * i]).collect(),
        }
    }

    pub fn cell(&self, level: usize, i: usize) -> Option<Cell> {
        if i > self.n_l()? {
            return None;
        }
        // ids are offset by one against times
        let id_at = |j: usize| if j == 0 || j == self.m() + 1 { None } else { Some(self.ids[j - 1]) };
        Some(Cell {
            level,
            index: i,
            var_id: self.ids[2 * i],
            a: self.times[2 * i],
            b: self.times[2 * i + 2],
            a_id: id_at(2 * i),
            b_id: id_at(2 * i + 2),
        })
    }
}

/// Cell `(a_i, b_i)` of the variable `T_{l,2i+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    /// 0-based block index.
    pub level: usize,
    pub index: usize,
    pub var_id: usize,
    pub a: f64,
    pub b: f64,
    /// Event at `a`, `None` at a block boundary.
    pub a_id: Option<usize>,
    pub b_id: Option<usize>,
}

impl Cell {
    pub fn width(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockStructure {
    pub horizon: f64,
    pub levels: Vec<Level>,
}

impl BlockStructure {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn active_cell(&self, l: usize) -> Option<Cell> {
        let lv = self.levels.get(l)?;
        lv.cell(l, lv.active?)
    }

    /// Active cells of all levels, `None` off `Gamma`.
    pub fn active_cells(&self) -> Option<Vec<Cell>> {
        (0..self.levels.len()).map(|l| self.active_cell(l)).collect()
    }
}

/// Block structure of the `E_n`-flagged events of `events` (time-sorted).
pub fn build_blocks_from_events(events: &[Event], t: f64, levels: usize) -> Result<BlockStructure> {
    if levels == 0 {
        return Err(Error::domain("level count L must be >= 1"));
    }
    if !(t > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    let lf = levels as f64;
    let mut out = Vec::with_capacity(levels);
    for l in 1..=levels {
        let start = t * (l - 1) as f64 / lf;
        let end = if l == levels { t } else { t * l as f64 / lf };
        let inside: Vec<&Event> = events.iter().filter(|e| e.in_en && e.time > start && e.time <= end).collect();
        let mut times = Vec::with_capacity(inside.len() + 2);
        times.push(start);
        times.extend(inside.iter().map(|e| e.time));
        times.push(end);
        let m = inside.len();
        let h = if m == 0 { f64::INFINITY } else { t / (2.0 * lf * m as f64) };
        let mut level = Level { start, end, times, ids: inside.iter().map(|e| e.id).collect(), h, active: None };
        level.active = select_active(&level);
        out.push(level);
    }
    Ok(BlockStructure { horizon: t, levels: out })
}

pub fn build_blocks(path: &JumpPath, levels: usize) -> Result<BlockStructure> {
    build_blocks_from_events(path.events(), path.horizon(), levels)
}

/// Smallest `i` whose cell width reaches `h`.
pub fn select_active(level: &Level) -> Option<usize> {
    level.gaps().iter().position(|&g| g >= level.h)
}

/// Membership in `Gamma`: every block has a jump and an active cell.
pub fn gamma_membership(blocks: &BlockStructure) -> bool {
    blocks.levels.iter().all(|l| l.m() >= 1 && l.active.is_some())
}

/// Largest active density `1 / (b - a)` over the blocks.
pub fn p_norm_zero(blocks: &BlockStructure) -> Result<f64> {
    let cells = blocks.active_cells().ok_or_else(|| Error::domain("p_norm_zero is defined on Gamma only"))?;
    Ok(cells.iter().map(|c| 1.0 / c.width()).fold(0.0, f64::max))
}

/// Conditional density of the active variable on its cell.
pub trait CellDensity: Sync {
    fn density(&self, v: f64, cell: &Cell) -> f64;
    /// `d/dv ln p`.
    fn log_derivative(&self, v: f64, cell: &Cell) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Uniform;

impl CellDensity for Uniform {
    fn density(&self, _v: f64, cell: &Cell) -> f64 {
        1.0 / cell.width()
    }

    fn log_derivative(&self, _v: f64, _cell: &Cell) -> f64 {
        0.0
    }
}

/// A solved configuration with its tangent flow.
#[derive(Clone, Debug)]
pub struct Snapshot {
    path: JumpPath,
    flow: TangentFlow,
}

impl Snapshot {
    pub fn new(model: &Model, path: JumpPath) -> Result<Self> {
        let flow = TangentFlow::new(model, &path)?;
        Ok(Snapshot { path, flow })
    }

    pub fn path(&self) -> &JumpPath {
        &self.path
    }

    pub fn flow(&self) -> &TangentFlow {
        &self.flow
    }

    fn pos(&self, id: usize) -> Result<usize> {
        self.path.position_of(id).ok_or_else(|| Error::domain(format!("no event with id {id}")))
    }

    pub fn time_of(&self, id: usize) -> Result<f64> {
        Ok(self.path.events()[self.pos(id)?].time)
    }

    /// `X_t` with its derivatives along the event `id`.
    pub fn terminal_jet(&self, id: usize) -> Result<Jet> {
        let k = self.pos(id)?;
        Ok(Jet::new(self.path.terminal(), self.flow.first(k), self.flow.second(k)))
    }

    /// `d^2 X_t / dT_i dT_j` for distinct events.
    pub fn mixed(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.flow.mixed(self.pos(i)?, self.pos(j)?))
    }
}

/// Path functionals with derivatives along the active variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    One,
    /// The active variable itself.
    Active,
    Terminal,
}

impl Functional {
    pub fn jet(self, snap: &Snapshot, var_id: usize) -> Result<Jet> {
        match self {
            Functional::One => Ok(Jet::constant(1.0)),
            Functional::Active => Ok(Jet::variable(snap.time_of(var_id)?)),
            Functional::Terminal => snap.terminal_jet(var_id),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Functional::One => "1",
            Functional::Active => "V",
            Functional::Terminal => "X_t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Functional::One),
            "V" | "active" => Ok(Functional::Active),
            "X_t" | "terminal" => Ok(Functional::Terminal),
            other => Err(Error::domain(format!("unknown functional `{other}`"))),
        }
    }
}

/// One-sided evaluation point of a border term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Endpoint {
    pub time: f64,
    /// Tie-break key placing the variable just after (right limit) or just
    /// before (left limit) the event sitting at `time`.
    pub key: f64,
    /// `+1` for a right end `e-`, `-1` for a left end `e+`.
    pub sign: f64,
}

/// Piece endpoints of the active cell. Jumps outside `E_n` lying inside the
/// cell split it into pieces; without them there are two endpoints.
pub fn border_points(path: &JumpPath, cell: &Cell) -> Result<Vec<Endpoint>> {
    let ev = path.events();
    let key_of = |id: usize| -> Result<f64> {
        ev.iter().find(|e| e.id == id).map(|e| e.key).ok_or_else(|| Error::domain(format!("no event with id {id}")))
    };
    let var_key = key_of(cell.var_id)?;
    let mut cuts: Vec<(f64, f64)> = Vec::new();
    cuts.push((cell.a, cell.a_id.map(key_of).transpose()?.map_or(var_key, |k| k + 0.5)));
    for e in ev.iter().filter(|e| e.time > cell.a && e.time < cell.b && e.id != cell.var_id) {
        cuts.push((e.time, e.key));
    }
    cuts.push((cell.b, cell.b_id.map(key_of).transpose()?.map_or(var_key, |k| k - 0.5)));
    let r = cuts.len() - 1;
    let mut out = Vec::with_capacity(2 * r);
    for j in 0..r {
        let (lo, lo_key) = cuts[j];
        let (hi, hi_key) = cuts[j + 1];
        let left_key = if j == 0 { lo_key } else { lo_key + 0.5 };
        let right_key = if j + 1 == r { hi_key } else { hi_key - 0.5 };
        out.push(Endpoint { time: lo, key: left_key, sign: -1.0 });
        out.push(Endpoint { time: hi, key: right_key, sign: 1.0 });
    }
    Ok(out)
}

/// Re-solve with the variable `var_id` placed at the endpoint.
pub fn collapse(model: &Model, path: &JumpPath, var_id: usize, ep: &Endpoint) -> Result<Snapshot> {
    let moved = resolve_moved(model, path, &[Move { id: var_id, time: ep.time, key: Some(ep.key) }])?;
    Snapshot::new(model, moved)
}

/// `D F` along the active variable.
pub fn derivative(snap: &Snapshot, cell: &Cell, f: Functional) -> Result<f64> {
    Ok(f.jet(snap, cell.var_id)?.d1)
}

/// `delta(F) = D F + F D ln p`.
pub fn delta<D: CellDensity>(snap: &Snapshot, cell: &Cell, f: Functional, density: &D) -> Result<f64> {
    let j = f.jet(snap, cell.var_id)?;
    let v = snap.time_of(cell.var_id)?;
    Ok(j.d1 + j.v * density.log_derivative(v, cell))
}

/// `[U] = sum over pieces of (U p)(e-) - (U p)(e+)`, with `U` evaluated on
/// the collapsed configurations.
pub fn border<D, U>(model: &Model, path: &JumpPath, cell: &Cell, density: &D, u: U) -> Result<f64>
where
    D: CellDensity,
    U: Fn(&Snapshot) -> Result<f64>,
{
    let mut acc = CompensatedSum::new();
    for ep in border_points(path, cell)? {
        let snap = collapse(model, path, cell.var_id, &ep)?;
        acc.add(ep.sign * u(&snap)? * density.density(ep.time, cell));
    }
    Ok(acc.value())
}

fn nondegenerate(df: f64, time: f64) -> Result<f64> {
    if df.abs() < 1e-300 || !df.is_finite() {
        Err(Error::DegenerateWeight { value: df, time })
    } else {
        Ok(df)
    }
}

/// `H(F, G) = G delta((D F)^{-1}) + D G (D F)^{-1}`.
pub fn weight_h<D: CellDensity>(
    snap: &Snapshot,
    cell: &Cell,
    f: Functional,
    g: Functional,
    density: &D,
) -> Result<f64> {
    let fj = f.jet(snap, cell.var_id)?;
    let gj = g.jet(snap, cell.var_id)?;
    let v = snap.time_of(cell.var_id)?;
    let df = nondegenerate(fj.d1, v)?;
    let dlp = density.log_derivative(v, cell);
    Ok(gj.v * (-fj.d2 / (df * df) + dlp / df) + gj.d1 / df)
}

/// Per-level weight diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightReport {
    pub level: usize,
    pub active: usize,
    pub df: f64,
    pub df_inv: f64,
    pub delta_df_inv: f64,
    pub h: f64,
    /// `(G / D F)(a+)` and `(G / D F)(b-)` (no density factor).
    pub border_pair: (f64, f64),
    pub gamma_n: f64,
}

/// Weight diagnostics for every level, `None` off `Gamma`.
pub fn weight_report(
    model: &Model,
    path: &JumpPath,
    blocks: &BlockStructure,
    g: Functional,
) -> Result<Option<Vec<WeightReport>>> {
    let Some(cells) = blocks.active_cells() else {
        return Ok(None);
    };
    let snap = Snapshot::new(model, path.clone())?;
    let gamma = crate::flow::gamma_n(model, path);
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let fj = snap.terminal_jet(cell.var_id)?;
        let df = nondegenerate(fj.d1, snap.time_of(cell.var_id)?)?;
        let ratio = |s: &Snapshot| -> Result<f64> { Ok(g.jet(s, cell.var_id)?.v / s.terminal_jet(cell.var_id)?.d1) };
        let pts = border_points(path, &cell)?;
        let first = collapse(model, path, cell.var_id, &pts[0])?;
        let last = collapse(model, path, cell.var_id, &pts[pts.len() - 1])?;
        out.push(WeightReport {
            level: cell.level,
            active: cell.index,
            df,
            df_inv: 1.0 / df,
            delta_df_inv: -fj.d2 / (df * df),
            h: weight_h(&snap, &cell, Functional::Terminal, g, &Uniform)?,
            border_pair: (ratio(&first)?, ratio(&last)?),
            gamma_n: gamma,
        });
    }
    Ok(Some(out))
}

/// Outcome of the one-dimensional fundamental-theorem check on a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedCellCheck {
    pub quadrature: f64,
    pub border: f64,
}

impl ClosedCellCheck {
    pub fn abs_err(&self) -> f64 {
        (self.quadrature - self.border).abs()
    }
}

/// Compare `int_a^b d/dv (q p) dv` by Gauss-Legendre quadrature on every
/// piece with the border term of `q`, where `q` is a jet-valued functional.
pub fn closed_cell_duality<Q>(
    model: &Model,
    path: &JumpPath,
    cell: &Cell,
    order: usize,
    q: Q,
) -> Result<ClosedCellCheck>
where
    Q: Fn(&Snapshot, usize) -> Result<Jet>,
{
    let pts = border_points(path, cell)?;
    let (nodes, weights) = gauss_legendre(order);
    let p = 1.0 / cell.width();
    let mut quad = CompensatedSum::new();
    for piece in pts.chunks(2) {
        let (lo, hi) = (piece[0].time, piece[1].time);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in nodes.iter().zip(&weights) {
            let v = mid + half * x;
            let moved = resolve_moved(model, path, &[Move { id: cell.var_id, time: v, key: None }])?;
            let snap = Snapshot::new(model, moved)?;
            quad.add(half * w * q(&snap, cell.var_id)?.d1 * p);
        }
    }
    let border = border(model, path, cell, &Uniform, |s| Ok(q(s, cell.var_id)?.v))?;
    Ok(ClosedCellCheck { quadrature: quad.value(), border })
}

/// Bounded test functions with two derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    Sin,
    Cos,
    /// `exp(-(x - center)^2 / (2 width^2))`.
    Bump {
        center: f64,
        width: f64,
    },
    /// `x`; unbounded, used for the `E[1_Gamma G]` self-check.
    Identity,
    /// Logistic step `1 / (1 + exp(-(x - center) / eps))`.
    Sigmoid {
        center: f64,
        eps: f64,
    },
}

impl TestFunction {
    /// `[phi, phi', phi'']` at `x`.
    pub fn eval(&self, x: f64) -> [f64; 3] {
        match *self {
            TestFunction::Sin => [x.sin(), x.cos(), -x.sin()],
            TestFunction::Cos => [x.cos(), -x.sin(), -x.cos()],
            TestFunction::Bump { center, width } => {
                let z = (x - center) / width;
                let e = (-0.5 * z * z).exp();
                [e, -z / width * e, (z * z - 1.0) / (width * width) * e]
            }
            TestFunction::Identity => [x, 1.0, 0.0],
            TestFunction::Sigmoid { center, eps } => {
                let z = (x - center) / eps;
                let s = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
                let d = s * (1.0 - s) / eps;
                [s, d, d * (1.0 - 2.0 * s) / eps]
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, TestFunction::Identity)
    }

    /// `sin`, `cos`, `identity`, `bump[:center:width]`, `sigmoid:center:eps`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::domain(format!("test function `{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|_| Error::domain(format!("test function `{s}`: bad number")))
        };
        match parts[0] {
            "sin" if parts.len() == 1 => Ok(TestFunction::Sin),
            "cos" if parts.len() == 1 => Ok(TestFunction::Cos),
            "identity" if parts.len() == 1 => Ok(TestFunction::Identity),
            "bump" if parts.len() == 1 => Ok(TestFunction::Bump { center: 0.0, width: 1.0 }),
            "bump" if parts.len() == 3 => Ok(TestFunction::Bump { center: num(1)?, width: num(2)? }),
            "sigmoid" if parts.len() == 3 => Ok(TestFunction::Sigmoid { center: num(1)?, eps: num(2)? }),
            _ => Err(Error::domain(format!("unknown test function `{s}`"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Sin => "sin".into(),
            TestFunction::Cos => "cos".into(),
            TestFunction::Identity => "identity".into(),
            TestFunction::Bump { center, width } => format!("bump:{center}:{width}"),
            TestFunction::Sigmoid { center, eps } => format!("sigmoid:{center}:{eps}"),
        }
    }
}

/// Per-path level-1 IBP values `-phi(F) H + [phi(F) G / D F]` for each test
/// function, with `F = X_t` differentiated along the active variable.
pub fn ibp_path_l1(
    model: &Model,
    path: &JumpPath,
    cell: &Cell,
    g: Functional,
    phis: &[TestFunction],
) -> Result<Vec<f64>> {
    let snap = Snapshot::new(model, path.clone())?;
    let h = weight_h(&snap, cell, Functional::Terminal, g, &Uniform)?;
    let x = snap.path().terminal();
    let mut out: Vec<CompensatedSum> = phis
        .iter()
        .map(|phi| {
            let mut s = CompensatedSum::new();
            s.add(-phi.eval(x)[0] * h);
            s
        })
        .collect();
    for ep in border_points(path, cell)? {
        let es = collapse(model, path, cell.var_id, &ep)?;
        let fj = es.terminal_jet(cell.var_id)?;
        let df = nondegenerate(fj.d1, ep.time)?;
        let ratio = g.jet(&es, cell.var_id)?.v / df * Uniform.density(ep.time, cell);
        for (acc, phi) in out.iter_mut().zip(phis) {
            acc.add(ep.sign * phi.eval(fj.v)[0] * ratio);
        }
    }
    Ok(out.iter().map(CompensatedSum::value).collect())
}

/// Derivative data of `F = X_t` along `(V1, V2)` at one configuration.
struct TwoVar {
    x: f64,
    f1: f64,
    f2: f64,
    f11: f64,
    f22: f64,
    f12: f64,
}

impl TwoVar {
    fn at(snap: &Snapshot, v1: usize, v2: usize) -> Result<Self> {
        let j1 = snap.terminal_jet(v1)?;
        let j2 = snap.terminal_jet(v2)?;
        Ok(TwoVar {
            x: j1.v,
            f1: nondegenerate(j1.d1, snap.time_of(v1)?)?,
            f2: nondegenerate(j2.d1, snap.time_of(v2)?)?,
            f11: j1.d2,
            f22: j2.d2,
            f12: snap.mixed(v1, v2)?,
        })
    }

    /// `H_1(F, G) = G (-F11 / F1^2) + D_1 G / F1`.
    fn h1(&self, g: f64, d1g: f64) -> f64 {
        -g * self.f11 / (self.f1 * self.f1) + d1g / self.f1
    }
}

/// Per-path level-2 iterated IBP values, estimating `E[1_Gamma phi''(X_t)]`
/// with only `phi` evaluated. `cells[0]` and `cells[1]` are the active cells
/// of blocks one and two.
pub fn ibp_path_l2(model: &Model, path: &JumpPath, cells: &[Cell], phis: &[TestFunction]) -> Result<Vec<f64>> {
    let (c1, c2) = (&cells[0], &cells[1]);
    let (v1, v2) = (c1.var_id, c2.var_id);
    let base = Snapshot::new(model, path.clone())?;
    let d = TwoVar::at(&base, v1, v2)?;
    let pos1 = base.pos(v1)?;
    let pos2 = base.pos(v2)?;
    let f122 = mixed_fd(model, path, &[(pos1, 1)], FdBase::Second(pos2))?;

    // level-2 weight H2 = -F22 / F2^2 and its V1 derivative
    let h2 = -d.f22 / (d.f2 * d.f2);
    let d1h2 = -f122 / (d.f2 * d.f2) + 2.0 * d.f22 * d.f12 / (d.f2 * d.f2 * d.f2);
    let h1_of_h2 = d.h1(h2, d1h2);

    let p1 = 1.0 / c1.width();
    let p2 = 1.0 / c2.width();
    let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); phis.len()];
    // -A, first part: +phi(F) H1(F, H2)
    for (a, phi) in acc.iter_mut().zip(phis) {
        a.add(phi.eval(d.x)[0] * h1_of_h2);
    }
    // -A, border part: -p1 [phi(F) H2 / F1]_1
    for ep in border_points(path, c1)? {
        let s = collapse(model, path, v1, &ep)?;
        let e = TwoVar::at(&s, v1, v2)?;
        let val = -e.f22 / (e.f2 * e.f2) / e.f1;
        for (a, phi) in acc.iter_mut().zip(phis) {
            a.add(-ep.sign * p1 * phi.eval(e.x)[0] * val);
        }
    }
    // B = p2 [Q]_2 with Q the level-1 IBP of phi'(F) / F2 at V2 collapsed
    let ep1s = border_points(path, c1)?;
    for ep2 in border_points(path, c2)? {
        let s2 = collapse(model, path, v2, &ep2)?;
        let e = TwoVar::at(&s2, v1, v2)?;
        let g = 1.0 / e.f2;
        let d1g = -e.f12 / (e.f2 * e.f2);
        let h = e.h1(g, d1g);
        for (a, phi) in acc.iter_mut().zip(phis) {
            a.add(-ep2.sign * p2 * phi.eval(e.x)[0] * h);
        }
        for ep1 in &ep1s {
            let moved = resolve_moved(
                model,
                path,
                &[
                    Move { id: v1, time: ep1.time, key: Some(ep1.key) },
                    Move { id: v2, time: ep2.time, key: Some(ep2.key) },
                ],
            )?;
            let s = Snapshot::new(model, moved)?;
            let f1 = nondegenerate(s.terminal_jet(v1)?.d1, ep1.time)?;
            let f2 = nondegenerate(s.terminal_jet(v2)?.d1, ep2.time)?;
            let x = s.path().terminal();
            for (a, phi) in acc.iter_mut().zip(phis) {
                a.add(ep2.sign * ep1.sign * p2 * p1 * phi.eval(x)[0] / (f2 * f1));
            }
        }
    }
    Ok(acc.iter().map(CompensatedSum::value).collect())
}

/// Monte Carlo run settings shared by the path-level drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub t: f64,
    /// Exhaustion level of the differentiated jumps.
    pub n: usize,
    /// Truncation level `N >= n` of the simulated equation.
    pub truncation: usize,
    pub levels: usize,
    pub paths: u64,
    pub seed: u64,
    pub chunk_size: u64,
    pub g: Functional,
}

impl RunConfig {
    pub fn new(t: f64, n: usize, levels: usize, paths: u64, seed: u64) -> Self {
        RunConfig { t, n, truncation: n, levels, paths, seed, chunk_size: 1024, g: Functional::One }
    }

    /// Sampler for the truncated equation.
    pub fn sampler(&self, measure: &crate::measures::IntensityMeasure) -> Result<crate::measures::PoissonSampler> {
        crate::measures::PoissonSampler::new(measure, self.truncation)
    }

    /// Events of path `p`, with the number of tie redraws.
    pub fn sample(&self, sampler: &crate::measures::PoissonSampler, p: u64) -> Result<(Vec<Event>, u32)> {
        let mut rng = PathRng::for_path(self.seed, p);
        let s = sampler.sample(self.t, self.n, &mut rng)?;
        Ok((Event::from_points(&s.points), s.resampled))
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::domain("level count L must be >= 1"));
        }
        if self.levels > 2 {
            return Err(Error::Unsupported(format!("iterated integration by parts with L = {}", self.levels)));
        }
        if self.levels == 2 && self.g != Functional::One {
            return Err(Error::Unsupported("two-fold integration by parts is implemented for G = 1".into()));
        }
        if self.truncation < self.n {
            return Err(Error::domain("truncation N must be >= n"));
        }
        if self.paths == 0 {
            return Err(Error::domain("path count must be positive"));
        }
        Ok(())
    }
}

/// IBP estimate against the direct estimate of `E[1_Gamma phi^(L)(X_t) G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IbpEstimate {
    pub phi: TestFunction,
    pub estimate: f64,
    pub stderr: f64,
    pub direct: f64,
    pub direct_stderr: f64,
    /// Standard error of the per-path difference.
    pub paired_stderr: f64,
    pub paths: u64,
    pub gamma_coverage: f64,
    pub resampled: u64,
    pub unbounded_warning: bool,
}

impl IbpEstimate {
    pub fn combined_stderr(&self) -> f64 {
        self.stderr.hypot(self.direct_stderr)
    }

    pub fn agrees(&self, sigmas: f64) -> bool {
        (self.estimate - self.direct).abs() <= sigmas * self.combined_stderr()
    }
}

struct PathOutcome {
    in_gamma: bool,
    ibp: Vec<f64>,
    direct: Vec<f64>,
    resampled: u32,
}

/// Level-`L` IBP estimates for several test functions from one set of paths.
pub fn ibp_estimate(
    model: &Model,
    measure: &crate::measures::IntensityMeasure,
    cfg: &RunConfig,
    phis: &[TestFunction],
) -> Result<Vec<IbpEstimate>> {
    cfg.validate()?;
    let sampler = cfg.sampler(measure)?;
    let k = phis.len();
    let outcomes = crate::numerics::map_paths(cfg.paths, cfg.chunk_size, |p| {
        let (events, resampled) = cfg.sample(&sampler, p)?;
        let blocks = build_blocks_from_events(&events, cfg.t, cfg.levels)?;
        let Some(cells) = blocks.active_cells() else {
            return Ok(PathOutcome { in_gamma: false, ibp: vec![0.0; k], direct: vec![0.0; k], resampled });
        };
        let path = solve_path(model, events, cfg.t)?;
        let x = path.terminal();
        let (ibp, direct) = if cfg.levels == 1 {
            let snap_g = match cfg.g {
                Functional::One => 1.0,
                g => g.jet(&Snapshot::new(model, path.clone())?, cells[0].var_id)?.v,
            };
            let ibp = ibp_path_l1(model, &path, &cells[0], cfg.g, phis)?;
            (ibp, phis.iter().map(|f| f.eval(x)[1] * snap_g).collect())
        } else {
            let ibp = ibp_path_l2(model, &path, &cells, phis)?;
            (ibp, phis.iter().map(|f| f.eval(x)[2]).collect())
        };
        Ok::<_, Error>(PathOutcome { in_gamma: true, ibp, direct, resampled })
    })?;

    let mut ibp_stats = vec![RunningStats::new(); k];
    let mut direct_stats = vec![RunningStats::new(); k];
    let mut diff_stats = vec![RunningStats::new(); k];
    let mut in_gamma = 0u64;
    let mut resampled = 0u64;
    for o in &outcomes {
        in_gamma += o.in_gamma as u64;
        resampled += o.resampled as u64;
        for j in 0..k {
            ibp_stats[j].push(o.ibp[j]);
            direct_stats[j].push(o.direct[j]);
            diff_stats[j].push(o.ibp[j] - o.direct[j]);
        }
    }
    Ok(phis
        .iter()
        .enumerate()
        .map(|(j, phi)| IbpEstimate {
            phi: *phi,
            estimate: ibp_stats[j].mean(),
            stderr: ibp_stats[j].stderr(),
            direct: direct_stats[j].mean(),
            direct_stderr: direct_stats[j].stderr(),
            paired_stderr: diff_stats[j].stderr(),
            paths: cfg.paths,
            gamma_coverage: in_gamma as f64 / cfg.paths as f64,
            resampled,
            unbounded_warning: !phi.is_bounded(),
        })
        .collect())
}
