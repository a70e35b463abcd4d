//! Compute-optimal allocation under fixed compute and unique-data budgets.
//!
//! For each candidate epoch count the model size is whatever spends the
//! whole budget, `N = C / (6 * U_D * epochs)`; the candidate with the lowest
//! predicted loss wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{eval_law, LawSpec, RunPoint};

pub const DEFAULT_MAX_EPOCHS: u32 = 64;
pub const DEFAULT_N_BOUNDS: (f64, f64) = (1e6, 1e13);
const CROSSOVER_SCAN_POINTS: usize = 64;
const CROSSOVER_REL_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpochMode {
    /// Whole epochs only.
    Integer,
    /// Refine the best whole-epoch candidate over real-valued epochs.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationQuery {
    pub compute: f64,
    pub u_tokens: f64,
    pub epoch_candidates: Vec<f64>,
    pub n_bounds: (f64, f64),
    pub mode: EpochMode,
    /// Reject candidates whose model size had to be clamped.
    pub strict: bool,
}

impl AllocationQuery {
    /// Integer epochs `1..=64`, default model-size clamp.
    pub fn new(compute: f64, u_tokens: f64) -> Self {
        Self {
            compute,
            u_tokens,
            epoch_candidates: integer_epochs(DEFAULT_MAX_EPOCHS),
            n_bounds: DEFAULT_N_BOUNDS,
            mode: EpochMode::Integer,
            strict: false,
        }
    }

    pub fn with_max_epochs(mut self, max: u32) -> Self {
        self.epoch_candidates = integer_epochs(max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compute > 0.0 && self.compute.is_finite()) {
            return Err(Error::InvalidParams(format!("compute must be positive, got {}", self.compute)));
        }
        if !(self.u_tokens >= 1.0 && self.u_tokens.is_finite()) {
            return Err(Error::InvalidParams(format!("u_tokens must be >= 1, got {}", self.u_tokens)));
        }
        if self.epoch_candidates.is_empty() || self.epoch_candidates.iter().any(|e| !(*e >= 1.0 && e.is_finite())) {
            return Err(Error::InvalidParams("epoch candidates must be non-empty and >= 1".into()));
        }
        let (lo, hi) = self.n_bounds;
        if !(lo >= 1.0 && hi >= lo) {
            return Err(Error::InvalidParams(format!("bad model-size bounds [{lo}, {hi}]")));
        }
        Ok(())
    }
}

pub fn integer_epochs(max: u32) -> Vec<f64> {
    (1..=max.max(1)).map(f64::from).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPoint {
    pub compute: f64,
    pub u_tokens: f64,
    pub n_params: f64,
    pub epochs: f64,
    pub predicted_loss: f64,
}

struct Candidate {
    n: f64,
    epochs: f64,
    loss: f64,
    clamped: bool,
}

fn evaluate(spec: &LawSpec, q: &AllocationQuery, epochs: f64) -> Result<Candidate> {
    let raw = q.compute / (6.0 * q.u_tokens * epochs);
    let n = raw.clamp(q.n_bounds.0, q.n_bounds.1);
    let loss = eval_law(spec, &RunPoint { n_params: n, u_tokens: q.u_tokens, epochs })?;
    Ok(Candidate { n, epochs, loss, clamped: n != raw })
}

/// Loss-minimizing allocation. Candidates are swept in ascending order and
/// only a strictly lower loss replaces the incumbent, so ties go to fewer
/// epochs regardless of the order the caller listed them in.
pub fn solve_allocation(spec: &LawSpec, q: &AllocationQuery) -> Result<AllocationPoint> {
    q.validate()?;
    let mut epochs = q.epoch_candidates.clone();
    epochs.sort_by(f64::total_cmp);
    epochs.dedup();

    let mut best: Option<Candidate> = None;
    for &e in &epochs {
        let c = evaluate(spec, q, e)?;
        if q.strict && c.clamped {
            continue;
        }
        if best.as_ref().is_none_or(|b| c.loss < b.loss) {
            best = Some(c);
        }
    }
    let mut best = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "every epoch candidate clamps N to [{:e}, {:e}] at C={:e}, U_D={:e}",
            q.n_bounds.0, q.n_bounds.1, q.compute, q.u_tokens
        ))
    })?;

    if q.mode == EpochMode::Continuous {
        let lo = epochs.iter().copied().rfind(|e| *e < best.epochs).unwrap_or(best.epochs);
        let hi = epochs.iter().copied().find(|e| *e > best.epochs).unwrap_or(best.epochs);
        if hi > lo {
            let refined = golden_section(|e| evaluate(spec, q, e).map(|c| c.loss).unwrap_or(f64::INFINITY), lo, hi);
            let c = evaluate(spec, q, refined)?;
            if c.loss < best.loss && !(q.strict && c.clamped) {
                best = c;
            }
        }
    }

    Ok(AllocationPoint {
        compute: q.compute,
        u_tokens: q.u_tokens,
        n_params: best.n,
        epochs: best.epochs,
        predicted_loss: best.loss,
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-9 * (a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Solves the allocation at every budget in `compute_grid` (strictly
/// increasing), using `template` for everything but the compute value.
pub fn trace_frontier(spec: &LawSpec, template: &AllocationQuery, compute_grid: &[f64]) -> Result<Vec<AllocationPoint>> {
    if compute_grid.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::InvalidParams("compute grid must be strictly increasing".into()));
    }
    compute_grid
        .par_iter()
        .map(|&c| solve_allocation(spec, &AllocationQuery { compute: c, ..template.clone() }))
        .collect()
}

/// `n` log-spaced budgets from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    grid[0] = lo;
    grid[n - 1] = hi;
    grid
}

/// Smallest budget in `c_range` at which `spec_b`'s optimal loss is no worse
/// than `spec_a`'s, located by a 64-point log scan and then bisection to 1%
/// relative width. `None` when `spec_b` never catches up in range.
pub fn find_crossover(
    spec_a: &LawSpec,
    spec_b: &LawSpec,
    template: &AllocationQuery,
    c_range: (f64, f64),
) -> Result<Option<f64>> {
    let (lo, hi) = c_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParams(format!("bad compute range [{lo:e}, {hi:e}]")));
    }
    let gap = |c: f64| -> Result<f64> {
        let q = AllocationQuery { compute: c, ..template.clone() };
        Ok(solve_allocation(spec_b, &q)?.predicted_loss - solve_allocation(spec_a, &q)?.predicted_loss)
    };
    let grid = log_grid(lo, hi, CROSSOVER_SCAN_POINTS);
    let gaps: Vec<f64> = grid.par_iter().map(|&c| gap(c)).collect::<Result<_>>()?;
    let Some(first) = gaps.iter().position(|g| *g <= 0.0) else {
        return Ok(None);
    };
    if first == 0 {
        return Ok(Some(grid[0]));
    }
    let (mut below, mut above) = (grid[first - 1], grid[first]);
    while above / below - 1.0 > CROSSOVER_REL_TOL {
        let mid = (below * above).sqrt();
        if gap(mid)? <= 0.0 {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(Some(above))
}
