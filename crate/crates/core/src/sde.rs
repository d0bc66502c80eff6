//! Pathwise solution of the jump equation: the drift ODE between consecutive
//! jump times, the jump map `x -> x + c(T_k, a_k, x)` at each jump.
//!
//! Between jumps the state is integrated with classical RK4 on a fixed grid of
//! `max(16, ceil(len / 0.01))` steps per interval, combined with a run at half
//! the step by one Richardson extrapolation. The step counts of a solve form a
//! [`StepPlan`] that can be frozen and reused for re-solves under perturbed
//! jump times, which keeps the terminal value a smooth function of the times.
//!
//! Optionally the tangent flow is carried along: `Y` (linearized flow), `Z`
//! (its reciprocal) and `S`, the accumulated second-order sensitivity
//! `S' = g_xx Y`, `S_{T_k} = S_{T_k-} + c_xx Y_{T_k-}^2 / Y_{T_k}`.

use std::cmp::Ordering;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::measures::MarkedPoint;
use crate::model::Model;
use crate::numerics::CompensatedSum;

const MAX_STEP: f64 = 0.01;
const MIN_STEPS: usize = 16;

/// A jump of the path. `id` is the index of the event in the original time
/// order and survives re-sorting; `key` breaks ties between equal times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub mark: f64,
    pub in_en: bool,
    pub id: usize,
    pub key: f64,
}

impl Event {
    pub fn new(time: f64, mark: f64, in_en: bool, id: usize) -> Self {
        Event { time, mark, in_en, id, key: id as f64 }
    }

    /// Events from sampled points, ids assigned in time order.
    pub fn from_points(points: &[MarkedPoint]) -> Vec<Event> {
        let mut ev: Vec<Event> = points.iter().map(|p| Event::new(p.time, p.mark, p.in_en, 0)).collect();
        ev.sort_by(|a, b| a.time.total_cmp(&b.time));
        for (i, e) in ev.iter_mut().enumerate() {
            e.id = i;
            e.key = i as f64;
        }
        ev
    }

    /// Events with the given times and marks, all flagged as lying in `E_n`.
    pub fn from_times(times: &[f64], marks: &[f64]) -> Vec<Event> {
        let pts: Vec<MarkedPoint> =
            times.iter().zip(marks).map(|(&time, &mark)| MarkedPoint { time, mark, atom: 0, in_en: true }).collect();
        Self::from_points(&pts)
    }

    fn order(a: &Event, b: &Event) -> Ordering {
        a.time.total_cmp(&b.time).then(a.key.total_cmp(&b.key))
    }
}

/// RK4 step counts per inter-jump interval (`events + 1` entries).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan(pub Vec<usize>);

impl StepPlan {
    fn fresh(bounds: &[f64]) -> Self {
        StepPlan(bounds.windows(2).map(|w| steps_for(w[1] - w[0])).collect())
    }

    /// Every interval refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        StepPlan(self.0.iter().map(|n| n * factor.max(1)).collect())
    }
}

fn steps_for(len: f64) -> usize {
    MIN_STEPS.max((len / MAX_STEP).ceil() as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub tangent: bool,
    pub plan: Option<StepPlan>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tangent: true, plan: None }
    }
}

/// Tangent flow stored at the event times.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSkeleton {
    pub y_before: Vec<f64>,
    pub y_after: Vec<f64>,
    pub z_after: Vec<f64>,
    pub s_after: Vec<f64>,
    pub y_terminal: f64,
    pub z_terminal: f64,
    pub s_terminal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverStats {
    pub rk4_steps: usize,
    /// `max |X|` over the integration grid and the event skeleton.
    pub sup_abs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpPath {
    horizon: f64,
    x0: f64,
    events: Vec<Event>,
    x_before: Vec<f64>,
    x_after: Vec<f64>,
    terminal: f64,
    tangent: Option<TangentSkeleton>,
    plan: StepPlan,
    stats: SolverStats,
}

impl JumpPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `X_{T_k-}` for the event at position `k`.
    pub fn x_before(&self, k: usize) -> f64 {
        self.x_before[k]
    }

    /// `X_{T_k}` for the event at position `k`.
    pub fn x_after(&self, k: usize) -> f64 {
        self.x_after[k]
    }

    pub fn terminal(&self) -> f64 {
        self.terminal
    }

    pub fn tangent(&self) -> Option<&TangentSkeleton> {
        self.tangent.as_ref()
    }

    pub fn plan(&self) -> &StepPlan {
        &self.plan
    }

    pub fn stats(&self) -> &SolverStats {
        &self.stats
    }

    /// Current position of the event with the given id.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.events.iter().position(|e| e.id == id)
    }

    /// Interval bounds `0, T_1, ..., T_J, t`.
    pub fn bounds(&self) -> Vec<f64> {
        interval_bounds(&self.events, self.horizon)
    }

    /// Text dump: one line `k T_k mark X_before X_after` per event, then
    /// `terminal X_t`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (k, e) in self.events.iter().enumerate() {
            writeln!(w, "{} {:.17e} {:.17e} {:.17e} {:.17e}", k, e.time, e.mark, self.x_before[k], self.x_after[k])?;
        }
        writeln!(w, "terminal {:.17e}", self.terminal)
    }
}

fn interval_bounds(events: &[Event], t: f64) -> Vec<f64> {
    let mut b = Vec::with_capacity(events.len() + 2);
    b.push(0.0);
    b.extend(events.iter().map(|e| e.time));
    b.push(t);
    b
}

/// One RK4 run of `n` steps from `s0` to `s1`.
fn rk4<const D: usize, F>(f: &F, s0: f64, s1: f64, y0: [f64; D], n: usize, sup: &mut f64) -> [f64; D]
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
{
    let h = (s1 - s0) / n as f64;
    let mut y = y0;
    let axpy = |y: &[f64; D], k: &[f64; D], c: f64| {
        let mut out = *y;
        for i in 0..D {
            out[i] += c * k[i];
        }
        out
    };
    for i in 0..n {
        let s = s0 + h * i as f64;
        let k1 = f(s, &y);
        let k2 = f(s + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
        let k3 = f(s + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
        let k4 = f(s + h, &axpy(&y, &k3, h));
        for j in 0..D {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        *sup = sup.max(y[0].abs());
    }
    y
}

/// RK4 with `n` and `2n` steps, combined by Richardson extrapolation.
pub(crate) fn integrate<const D: usize, F>(
    f: &F,
    s0: f64,
    s1: f64,
    y0: [f64; D],
    n: usize,
    sup: &mut f64,
) -> Result<[f64; D]>
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
{
    if s1 <= s0 {
        return Ok(y0);
    }
    let mut ignore = 0.0;
    let coarse = rk4(f, s0, s1, y0, n, &mut ignore);
    let fine = rk4(f, s0, s1, y0, 2 * n, sup);
    let mut out = fine;
    for i in 0..D {
        out[i] = fine[i] + (fine[i] - coarse[i]) / 15.0;
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::StepUnderflow { start: s0, end: s1 })
    }
}

/// Solve with the tangent flow and a fresh step plan.
pub fn solve_path(model: &Model, events: Vec<Event>, t: f64) -> Result<JumpPath> {
    solve_with(model, events, t, &SolveOptions::default())
}

pub fn solve_with(model: &Model, mut events: Vec<Event>, t: f64, opts: &SolveOptions) -> Result<JumpPath> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    events.sort_by(Event::order);
    if let Some(e) = events.iter().find(|e| !(e.time >= 0.0 && e.time <= t)) {
        return Err(Error::domain(format!("event time {} outside [0, {t}]", e.time)));
    }
    let bounds = interval_bounds(&events, t);
    let plan = match &opts.plan {
        Some(p) if p.0.len() == bounds.len() - 1 => p.clone(),
        _ => StepPlan::fresh(&bounds),
    };
    let x0 = model.x0();
    let n_ev = events.len();
    let mut x_before = Vec::with_capacity(n_ev);
    let mut x_after = Vec::with_capacity(n_ev);
    let mut sup = x0.abs();
    let mut rk4_steps = 0;

    let terminal;
    let mut tangent = None;
    if opts.tangent {
        let rhs = |s: f64, y: &[f64; 4]| {
            let gx = model.g_x(s, y[0]);
            [model.g(s, y[0]), gx * y[1], -gx * y[2], model.g_xx(s, y[0]) * y[1]]
        };
        let mut sk = TangentSkeleton {
            y_before: Vec::with_capacity(n_ev),
            y_after: Vec::with_capacity(n_ev),
            z_after: Vec::with_capacity(n_ev),
            s_after: Vec::with_capacity(n_ev),
            y_terminal: 0.0,
            z_terminal: 0.0,
            s_terminal: 0.0,
        };
        let mut state = [x0, 1.0, 1.0, 0.0];
        for (k, e) in events.iter().enumerate() {
            state = integrate(&rhs, bounds[k], bounds[k + 1], state, plan.0[k], &mut sup)?;
            rk4_steps += 3 * plan.0[k];
            let [x, y, z, s] = state;
            let one_cx = 1.0 + model.c_x(e.time, e.mark, x);
            if one_cx == 0.0 {
                return Err(Error::SingularFlow { event: k, time: e.time });
            }
            let xa = x + model.c(e.time, e.mark, x);
            let ya = one_cx * y;
            let sa = s + model.c_xx(e.time, e.mark, x) * y * y / ya;
            x_before.push(x);
            x_after.push(xa);
            sk.y_before.push(y);
            sk.y_after.push(ya);
            sk.z_after.push(z / one_cx);
            sk.s_after.push(sa);
            sup = sup.max(xa.abs());
            state = [xa, ya, z / one_cx, sa];
        }
        state = integrate(&rhs, bounds[n_ev], t, state, plan.0[n_ev], &mut sup)?;
        rk4_steps += 3 * plan.0[n_ev];
        terminal = state[0];
        sk.y_terminal = state[1];
        sk.z_terminal = state[2];
        sk.s_terminal = state[3];
        tangent = Some(sk);
    } else {
        let rhs = |s: f64, y: &[f64; 1]| [model.g(s, y[0])];
        let mut state = [x0];
        for (k, e) in events.iter().enumerate() {
            state = integrate(&rhs, bounds[k], bounds[k + 1], state, plan.0[k], &mut sup)?;
            rk4_steps += 3 * plan.0[k];
            let x = state[0];
            let xa = x + model.c(e.time, e.mark, x);
            x_before.push(x);
            x_after.push(xa);
            sup = sup.max(xa.abs());
            state = [xa];
        }
        state = integrate(&rhs, bounds[n_ev], t, state, plan.0[n_ev], &mut sup)?;
        rk4_steps += 3 * plan.0[n_ev];
        terminal = state[0];
    }

    Ok(JumpPath {
        horizon: t,
        x0,
        events,
        x_before,
        x_after,
        terminal,
        tangent,
        plan,
        stats: SolverStats { rk4_steps, sup_abs: sup },
    })
}

/// A requested relocation of one event, addressed by id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub id: usize,
    pub time: f64,
    /// Tie-break key at the new time; `None` keeps the current key.
    pub key: Option<f64>,
}

/// Re-solve with several events moved. The step plan of `path` is reused
/// when the event order is unchanged.
pub fn resolve_moved(model: &Model, path: &JumpPath, moves: &[Move]) -> Result<JumpPath> {
    let mut events = path.events.clone();
    for mv in moves {
        let e = events
            .iter_mut()
            .find(|e| e.id == mv.id)
            .ok_or_else(|| Error::domain(format!("no event with id {}", mv.id)))?;
        e.time = mv.time;
        if let Some(k) = mv.key {
            e.key = k;
        }
    }
    events.sort_by(Event::order);
    let same_order = events.iter().zip(&path.events).all(|(a, b)| a.id == b.id);
    let opts = SolveOptions { tangent: path.tangent.is_some(), plan: same_order.then(|| path.plan.clone()) };
    solve_with(model, events, path.horizon, &opts)
}

/// Re-solve with the event at position `k` moved to `new_time`, which must
/// lie within the closed interval between its neighbours; ties with a
/// neighbour are ordered by the original index.
pub fn perturb_and_resolve(model: &Model, path: &JumpPath, k: usize, new_time: f64) -> Result<JumpPath> {
    let ev = path
        .events
        .get(k)
        .ok_or_else(|| Error::domain(format!("event index {k} out of range ({} events)", path.len())))?;
    let lo = if k == 0 { 0.0 } else { path.events[k - 1].time };
    let hi = path.events.get(k + 1).map_or(path.horizon, |e| e.time);
    if !(new_time >= lo && new_time <= hi) {
        return Err(Error::domain(format!("new time {new_time} leaves [{lo}, {hi}] for event {k}")));
    }
    resolve_moved(model, path, &[Move { id: ev.id, time: new_time, key: None }])
}

/// `N_t(f) = sum f(mark)` over the events, optionally only those in `E_n`.
pub fn nt_functional<F: Fn(f64) -> f64>(path: &JumpPath, f: F, restrict_to_en: bool) -> f64 {
    nt_over(&path.events, f, restrict_to_en)
}

pub(crate) fn nt_over<F: Fn(f64) -> f64>(events: &[Event], f: F, restrict_to_en: bool) -> f64 {
    events.iter().filter(|e| !restrict_to_en || e.in_en).map(|e| f(e.mark)).collect::<CompensatedSum>().value()
}

/// `C_t (1 + N_t(c_bar)) e^{N_t(c_bar)}` with `C_t = (|x0| + N_t(c_bar) + g_bar t) e^{g_bar t}`.
pub fn apriori_bound(model: &Model, path: &JumpPath) -> f64 {
    let n_c = nt_functional(path, |a| model.c_bar(a), false);
    let gt = model.g_bar() * path.horizon;
    let c_t = (model.x0().abs() + n_c + gt) * gt.exp();
    c_t * (1.0 + n_c) * n_c.exp()
}
