//! Box-constrained L-BFGS with a strong-Wolfe line search, and a projected
//! Nelder-Mead simplex used when the line search cannot make progress.
//!
//! Bounds are handled with an active-set rule: a coordinate sitting on a
//! bound whose gradient points outward is frozen for the iteration, and the
//! step length is capped so the iterate never leaves the box.

use std::collections::VecDeque;

/// A scalar function to minimize. Infeasible points return `f64::INFINITY`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Value and gradient. The default uses central differences with step
    /// `1e-6 * max(1, |x_i|)`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        central_difference(|p| self.value(p), x, grad);
        self.value(x)
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], grad: &mut [f64]) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Largest `t` such that `x + t * d` stays inside the box.
    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        for i in 0..x.len() {
            if d[i] > 0.0 && self.upper[i].is_finite() {
                t = t.min(((self.upper[i] - x[i]) / d[i]).max(0.0));
            } else if d[i] < 0.0 && self.lower[i].is_finite() {
                t = t.min(((self.lower[i] - x[i]) / d[i]).max(0.0));
            }
        }
        t
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let blocked = (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0);
            out[i] = if blocked { 0.0 } else { g[i] };
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_rel_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            memory: 10,
            grad_tol: 1e-12,
            f_rel_tol: 1e-15,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
    SimplexConverged,
    MaxEvaluations,
    NonFiniteStart,
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(
            self,
            Termination::GradientTolerance | Termination::FunctionTolerance | Termination::SimplexConverged
        )
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct LineSearchPoint {
    f: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineFn<'a, O: Objective + ?Sized> {
    obj: &'a O,
    bounds: &'a Bounds,
    x: &'a [f64],
    d: &'a [f64],
    evals: usize,
}

impl<O: Objective + ?Sized> LineFn<'_, O> {
    fn eval(&mut self, step: f64) -> (f64, f64, Vec<f64>, Vec<f64>) {
        self.evals += 1;
        let mut x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + step * b).collect();
        self.bounds.project(&mut x);
        let mut g = vec![0.0; x.len()];
        let f = self.obj.value_grad(&x, &mut g);
        let slope = dot(&g, self.d);
        (f, slope, x, g)
    }
}

/// Safeguarded cubic interpolation for the minimizer in `[lo, hi]`.
fn interpolate(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let (t0, f0, d0) = a;
    let (t1, f1, d1) = b;
    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    let d1_ = d0 + d1 - 3.0 * (f0 - f1) / (t0 - t1);
    let disc = d1_ * d1_ - d0 * d1;
    let mut t = f64::NAN;
    if disc >= 0.0 && f0.is_finite() && f1.is_finite() {
        let d2 = (t1 - t0).signum() * disc.sqrt();
        t = t1 - (t1 - t0) * (d1 + d2 - d1_) / (d1 - d0 + 2.0 * d2);
    }
    let width = hi - lo;
    if !t.is_finite() || t <= lo + 0.1 * width || t >= hi - 0.1 * width {
        0.5 * (lo + hi)
    } else {
        t
    }
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// step with sufficient decrease is found.
fn strong_wolfe<O: Objective + ?Sized>(
    line: &mut LineFn<'_, O>,
    f0: f64,
    slope0: f64,
    initial: f64,
    max_step: f64,
    cfg: &LbfgsConfig,
) -> Option<LineSearchPoint> {
    let armijo = |t: f64, f: f64| f <= f0 + cfg.c1 * t * slope0;
    let curvature = |s: f64| s.abs() <= -cfg.c2 * slope0;

    let mut prev = (0.0, f0, slope0);
    let mut t = initial.min(max_step);
    let mut best: Option<LineSearchPoint> = None;
    let remember = |f: f64, x: Vec<f64>, g: Vec<f64>, best: &mut Option<LineSearchPoint>| {
        if f < f0 && best.as_ref().is_none_or(|b| f < b.f) {
            *best = Some(LineSearchPoint { f, x, g });
        }
    };

    for i in 0..cfg.max_line_search {
        let (f, s, x, g) = line.eval(t);
        if !f.is_finite() {
            // Shrink into the finite region.
            t = 0.5 * (prev.0 + t);
            if t - prev.0 < 1e-20 {
                break;
            }
            continue;
        }
        if !armijo(t, f) || (i > 0 && f >= prev.1) {
            return zoom(line, f0, slope0, prev, (t, f, s), cfg).or(best);
        }
        if curvature(s) {
            return Some(LineSearchPoint { f, x, g });
        }
        if s >= 0.0 {
            return zoom(line, f0, slope0, (t, f, s), prev, cfg).or(best);
        }
        remember(f, x, g, &mut best);
        if t >= max_step {
            // Still descending at the boundary of the box: take the full step.
            return best;
        }
        prev = (t, f, s);
        t = (2.0 * t).min(max_step);
    }
    best
}

fn zoom<O: Objective + ?Sized>(
    line: &mut LineFn<'_, O>,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    cfg: &LbfgsConfig,
) -> Option<LineSearchPoint> {
    let mut best: Option<LineSearchPoint> = None;
    for _ in 0..cfg.max_line_search {
        let t = interpolate(lo, hi);
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
        let (f, s, x, g) = line.eval(t);
        if !f.is_finite() || f > f0 + cfg.c1 * t * slope0 || f >= lo.1 {
            hi = (t, f, s);
        } else {
            if s.abs() <= -cfg.c2 * slope0 {
                return Some(LineSearchPoint { f, x, g });
            }
            if f < f0 && best.as_ref().is_none_or(|b| f < b.f) {
                best = Some(LineSearchPoint { f, x: x.clone(), g: g.clone() });
            }
            if s * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, f, s);
        }
    }
    best
}

/// Minimize `obj` from `x0` inside `bounds`.
pub fn lbfgs<O: Objective + ?Sized>(obj: &O, x0: &[f64], bounds: &Bounds, cfg: &LbfgsConfig) -> Minimum {
    let n = obj.dim();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum { x, f: f64::INFINITY, iterations: 0, evaluations, termination: Termination::NonFiniteStart };
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut pg = vec![0.0; n];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        bounds.projected_gradient(&x, &g, &mut pg);
        if inf_norm(&pg) <= cfg.grad_tol || f == 0.0 {
            termination = Termination::GradientTolerance;
            break;
        }

        let mut d = two_loop(&pg, &history);
        for i in 0..n {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        let mut slope = dot(&d, &g);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }

        let max_step = bounds.max_step(&x, &d);
        let initial = if history.is_empty() { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };
        let mut line = LineFn { obj, bounds, x: &x, d: &d, evals: 0 };
        let found = strong_wolfe(&mut line, f, slope, initial, max_step, cfg);
        evaluations += line.evals;

        let Some(step) = found else {
            if !history.is_empty() {
                history.clear();
                iterations += 1;
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = f - step.f;
        x = step.x;
        g = step.g;
        let previous = f;
        f = step.f;
        iterations += 1;
        if decrease <= cfg.f_rel_tol * previous.abs().max(f.abs()).max(f64::MIN_POSITIVE) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }

    Minimum { x, f, iterations, evaluations, termination }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[derive(Clone, Debug)]
pub struct SimplexConfig {
    pub max_evaluations: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self { max_evaluations: 20_000, f_tol: 1e-16, x_tol: 1e-10, initial_step: 0.1 }
    }
}

/// Nelder-Mead with every trial point projected onto the box.
pub fn nelder_mead<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    bounds: &Bounds,
    cfg: &SimplexConfig,
) -> Minimum {
    let n = obj.dim();
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |p: &mut Vec<f64>| {
        bounds.project(p);
        evaluations.set(evaluations.get() + 1);
        let v = obj.value(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    let f_start = eval(&mut start);
    let mut simplex = vec![(start.clone(), f_start)];
    for i in 0..n {
        let mut p = start.clone();
        let h = cfg.initial_step * start[i].abs().max(1.0);
        p[i] += h;
        if p[i] > bounds.upper[i] {
            p[i] = start[i] - h;
        }
        let fp = eval(&mut p);
        simplex.push((p, fp));
    }

    let mut iterations = 0;
    let termination = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max);
        if best.is_finite() && spread <= cfg.f_tol * best.abs().max(1e-300) + 1e-300 && diameter <= cfg.x_tol {
            break Termination::SimplexConverged;
        }
        if best.is_finite() && spread == 0.0 && diameter <= cfg.x_tol * 1e3 {
            break Termination::SimplexConverged;
        }
        if evaluations.get() >= cfg.max_evaluations {
            break Termination::MaxEvaluations;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64).collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
        };

        let mut reflected = toward(-1.0);
        let fr = eval(&mut reflected);
        if fr < simplex[0].1 {
            let mut expanded = toward(-2.0);
            let fe = eval(&mut expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (mut contracted, outside) = if fr < simplex[n].1 { (toward(-0.5), true) } else { (toward(0.5), false) };
            let fc = eval(&mut contracted);
            let limit = if outside { fr } else { simplex[n].1 };
            if fc < limit {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = anchor.iter().zip(&item.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                    let fp = eval(&mut p);
                    *item = (p, fp);
                }
            }
        }
    };

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f, iterations, evaluations: evaluations.get(), termination }
}
