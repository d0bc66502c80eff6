//! Derivatives of the terminal value `X_t` with respect to jump times.
//!
//! Two independent routes are provided for orders one and two:
//! - direct recursions, integrating the variational equation of `U_k` (and
//!   of `W_k`) from `T_k` to `t` on the step plan of the primal solve;
//! - closed products of the tangent flow stored in the path skeleton:
//!   `U_k = alpha_k Y_t Z_k` and
//!   `W_k = Y_t Z_k w0_k + alpha_k^2 Y_t Z_k^2 (S_t - S_k)`, where `w0_k` is
//!   the initial slope of `U_k` right after `T_k`.
//!
//! Mixed and higher derivatives use central finite differences over re-solves
//! with a frozen step plan, applied to an analytic lower-order base.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::sde::{integrate, nt_functional, resolve_moved, JumpPath, Move};

fn check_index(path: &JumpPath, k: usize) -> Result<()> {
    if k < path.len() {
        Ok(())
    } else {
        Err(Error::domain(format!("event index {k} out of range ({} events)", path.len())))
    }
}

/// Per-event quantities of the tangent flow along a solved path.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentFlow {
    pub alpha: Vec<f64>,
    pub alpha_x: Vec<f64>,
    /// `U_k(T_k+)'`: `alpha_t + alpha_x g(T_k, X_{T_k-}) - g_x(T_k, X_{T_k}) alpha`.
    pub w0: Vec<f64>,
    pub y_before: Vec<f64>,
    pub y_after: Vec<f64>,
    pub z_after: Vec<f64>,
    pub s_after: Vec<f64>,
    pub y_t: f64,
    pub z_t: f64,
    pub s_t: f64,
}

impl TangentFlow {
    pub fn new(model: &Model, path: &JumpPath) -> Result<Self> {
        let sk = path.tangent().ok_or_else(|| Error::domain("path was solved without the tangent flow"))?;
        let n = path.len();
        let mut alpha = Vec::with_capacity(n);
        let mut alpha_x = Vec::with_capacity(n);
        let mut w0 = Vec::with_capacity(n);
        for (k, e) in path.events().iter().enumerate() {
            let (xb, xa) = (path.x_before(k), path.x_after(k));
            let al = model.alpha(e.time, e.mark, xb);
            let ax = model.alpha_x(e.time, e.mark, xb);
            let at = model.alpha_t(e.time, e.mark, xb);
            alpha.push(al);
            alpha_x.push(ax);
            w0.push(at + ax * model.g(e.time, xb) - model.g_x(e.time, xa) * al);
        }
        Ok(TangentFlow {
            alpha,
            alpha_x,
            w0,
            y_before: sk.y_before.clone(),
            y_after: sk.y_after.clone(),
            z_after: sk.z_after.clone(),
            s_after: sk.s_after.clone(),
            y_t: sk.y_terminal,
            z_t: sk.z_terminal,
            s_t: sk.s_terminal,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `alpha_k Y_t Z_k`.
    pub fn first(&self, k: usize) -> f64 {
        self.alpha[k] * self.y_t * self.z_after[k]
    }

    /// `d^2 X_t / dT_k^2`.
    pub fn second(&self, k: usize) -> f64 {
        let yz = self.y_t * self.z_after[k];
        yz * self.w0[k] + self.alpha[k] * self.alpha[k] * yz * self.z_after[k] * (self.s_t - self.s_after[k])
    }

    /// `d^2 X_t / dT_j dT_k` for `j != k` (positions in time order).
    pub fn mixed(&self, j: usize, k: usize) -> f64 {
        let (j, k) = if j < k { (j, k) } else { (k, j) };
        self.alpha[j]
            * self.y_t
            * self.z_after[j]
            * self.z_after[k]
            * (self.alpha_x[k] * self.y_before[k] + self.alpha[k] * (self.s_t - self.s_after[k]))
    }

    /// Largest `|Y Z - 1|` over the stored times.
    pub fn product_defect(&self) -> f64 {
        self.y_after
            .iter()
            .zip(&self.z_after)
            .map(|(y, z)| (y * z - 1.0).abs())
            .fold((self.y_t * self.z_t - 1.0).abs(), f64::max)
    }
}

/// `U_k(t)` by integrating `u' = g_x u` from `T_k` with `u = alpha_k`, and
/// `u -> (1 + c_x) u` at later jumps.
pub fn first_derivative(model: &Model, path: &JumpPath, k: usize) -> Result<f64> {
    check_index(path, k)?;
    let ev = path.events();
    let bounds = path.bounds();
    let plan = &path.plan().0;
    let e = ev[k];
    let rhs = |s: f64, y: &[f64; 2]| [model.g(s, y[0]), model.g_x(s, y[0]) * y[1]];
    let mut st = [path.x_after(k), model.alpha(e.time, e.mark, path.x_before(k))];
    let mut sup = 0.0;
    for i in k + 1..=ev.len() {
        st = integrate(&rhs, bounds[i], bounds[i + 1], st, plan[i], &mut sup)?;
        if let Some(e) = ev.get(i) {
            let [x, u] = st;
            st = [x + model.c(e.time, e.mark, x), (1.0 + model.c_x(e.time, e.mark, x)) * u];
        }
    }
    Ok(st[1])
}

/// `alpha(T_k, a_k, X_{T_k-}) Y_t Z_{T_k}`.
pub fn first_derivative_product(model: &Model, path: &JumpPath, k: usize) -> Result<f64> {
    check_index(path, k)?;
    Ok(TangentFlow::new(model, path)?.first(k))
}

/// `W_k(t)` by integrating `w' = g_x w + g_xx u^2` alongside `u`, with
/// `w -> (1 + c_x) w + c_xx u^2` at later jumps.
pub fn second_derivative(model: &Model, path: &JumpPath, k: usize) -> Result<f64> {
    check_index(path, k)?;
    let ev = path.events();
    let bounds = path.bounds();
    let plan = &path.plan().0;
    let e = ev[k];
    let (xb, xa) = (path.x_before(k), path.x_after(k));
    let alpha = model.alpha(e.time, e.mark, xb);
    let w0 = model.alpha_t(e.time, e.mark, xb) + model.alpha_x(e.time, e.mark, xb) * model.g(e.time, xb)
        - model.g_x(e.time, xa) * alpha;
    let rhs = |s: f64, y: &[f64; 3]| {
        let gx = model.g_x(s, y[0]);
        [model.g(s, y[0]), gx * y[1], gx * y[2] + model.g_xx(s, y[0]) * y[1] * y[1]]
    };
    let mut st = [xa, alpha, w0];
    let mut sup = 0.0;
    for i in k + 1..=ev.len() {
        st = integrate(&rhs, bounds[i], bounds[i + 1], st, plan[i], &mut sup)?;
        if let Some(e) = ev.get(i) {
            let [x, u, w] = st;
            let one_cx = 1.0 + model.c_x(e.time, e.mark, x);
            st = [x + model.c(e.time, e.mark, x), one_cx * u, one_cx * w + model.c_xx(e.time, e.mark, x) * u * u];
        }
    }
    Ok(st[2])
}

/// What a finite difference is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdBase {
    /// `X_t`.
    Value,
    /// Analytic `U_k` (position `k`).
    First(usize),
    /// Analytic `W_k` (position `k`).
    Second(usize),
}

impl FdBase {
    fn order(self) -> u32 {
        match self {
            FdBase::Value => 0,
            FdBase::First(_) => 1,
            FdBase::Second(_) => 2,
        }
    }

    fn eval(self, model: &Model, path: &JumpPath) -> Result<f64> {
        match self {
            FdBase::Value => Ok(path.terminal()),
            FdBase::First(k) => {
                check_index(path, k)?;
                Ok(TangentFlow::new(model, path)?.first(k))
            }
            FdBase::Second(k) => {
                check_index(path, k)?;
                Ok(TangentFlow::new(model, path)?.second(k))
            }
        }
    }
}

/// Central differences of `base` along the jump times at the given
/// positions, each with its order. Per-axis step `1e-5 (1 + |T|)`, one
/// Richardson level; total order (including the base) at most 3.
pub fn mixed_fd(model: &Model, path: &JumpPath, axes: &[(usize, u32)], base: FdBase) -> Result<f64> {
    mixed_fd_with_step(model, path, axes, base, 1e-5)
}

/// As [`mixed_fd`] with per-axis step `scale (1 + |T|)`.
pub fn mixed_fd_with_step(
    model: &Model,
    path: &JumpPath,
    axes: &[(usize, u32)],
    base: FdBase,
    scale: f64,
) -> Result<f64> {
    let total: u32 = axes.iter().map(|a| a.1).sum::<u32>() + base.order();
    if total > 3 {
        return Err(Error::Unsupported(format!("finite-difference order {total} exceeds 3")));
    }
    let mut expanded = Vec::new();
    for &(k, order) in axes {
        check_index(path, k)?;
        expanded.extend(std::iter::repeat_n(k, order as usize));
    }
    let ev = path.events();
    let mut steps = Vec::with_capacity(expanded.len());
    for &k in &expanded {
        let lo = if k == 0 { 0.0 } else { ev[k - 1].time };
        let hi = ev.get(k + 1).map_or(path.horizon(), |e| e.time);
        let room = (ev[k].time - lo).min(hi - ev[k].time) / (4.0 * (expanded.len() as f64 + 1.0));
        let mut h = scale * (1.0 + ev[k].time.abs());
        while h > room {
            h *= 0.5;
            if h < 1e-9 {
                return Err(Error::StepCollision { event: k, min: 1e-9 });
            }
        }
        steps.push(h);
    }
    let mut offsets = vec![0.0; expanded.len()];
    nested_difference(model, path, &expanded, &steps, &mut offsets, 0, base)
}

fn nested_difference(
    model: &Model,
    path: &JumpPath,
    axes: &[usize],
    steps: &[f64],
    offsets: &mut [f64],
    level: usize,
    base: FdBase,
) -> Result<f64> {
    if level == axes.len() {
        if offsets.iter().all(|&o| o == 0.0) {
            return base.eval(model, path);
        }
        let ev = path.events();
        let mut moves: Vec<Move> = Vec::new();
        for (i, &k) in axes.iter().enumerate() {
            match moves.iter_mut().find(|m| m.id == ev[k].id) {
                Some(m) => m.time += offsets[i],
                None => moves.push(Move { id: ev[k].id, time: ev[k].time + offsets[i], key: None }),
            }
        }
        let moved = resolve_moved(model, path, &moves)?;
        return base.eval(model, &moved);
    }
    let central = |h: f64, offsets: &mut [f64]| -> Result<f64> {
        offsets[level] = h;
        let plus = nested_difference(model, path, axes, steps, offsets, level + 1, base)?;
        offsets[level] = -h;
        let minus = nested_difference(model, path, axes, steps, offsets, level + 1, base)?;
        offsets[level] = 0.0;
        Ok((plus - minus) / (2.0 * h))
    };
    let h = steps[level];
    let coarse = central(h, offsets)?;
    let fine = central(0.5 * h, offsets)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// `gamma_n = (e^{2 N_t(c_bar)} N_t(1_{E_n} / alpha_lower))^{-1}`; infinite
/// when no event lies in `E_n`.
pub fn gamma_n(model: &Model, path: &JumpPath) -> f64 {
    let n_c = nt_functional(path, |a| model.c_bar(a), false);
    let inv = nt_functional(path, |a| 1.0 / model.alpha_lower(a), true);
    if inv == 0.0 {
        f64::INFINITY
    } else {
        1.0 / ((2.0 * n_c).exp() * inv)
    }
}

/// `e^{-g_bar t} gamma_n`: the lower bound with the drift contribution to
/// `|Y_t Z_k|` kept.
pub fn gamma_n_drift_corrected(model: &Model, path: &JumpPath) -> f64 {
    (-model.g_bar() * path.horizon()).exp() * gamma_n(model, path)
}

/// Upper bound on `|U_k|`:
/// `(2 g_bar + 1) c_bar(a_k) e^{g_bar t} e^{N_t(c_bar)} (1 + A)`, with `A`
/// the a priori bound on `sup |X|`.
pub fn growth_bound(model: &Model, path: &JumpPath, k: usize) -> f64 {
    let n_c = nt_functional(path, |a| model.c_bar(a), false);
    let gb = model.g_bar();
    let a = crate::sde::apriori_bound(model, path);
    (2.0 * gb + 1.0) * model.c_bar(path.events()[k].mark) * (gb * path.horizon() + n_c).exp() * (1.0 + a)
}

/// One diagnostic row per event: `k, U_k, W_k, gamma_n`.
pub fn diagnostic_rows(model: &Model, path: &JumpPath) -> Result<Vec<(usize, f64, f64, f64)>> {
    let tf = TangentFlow::new(model, path)?;
    let g = gamma_n(model, path);
    Ok((0..tf.len()).map(|k| (k, tf.first(k), tf.second(k), g)).collect())
}
