//! Two-phase robust fitting.
//!
//! Phase 1 fits the five Chinchilla constants to single-epoch runs. Phase 2
//! locks those constants and fits only the repetition parameters. Both
//! minimize the mean Huber loss of log-space residuals from a grid of
//! starting points with bounded L-BFGS, falling back to Nelder-Mead for
//! starts whose line search stalls.
//!
//! Scale parameters (E, A, B, P, R*) are optimized in log space; exponents
//! are optimized directly inside box bounds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::BootstrapReport;
use crate::error::{Error, Result};
use crate::laws::{ChinchillaParams, LawKind, LawSpec, RepetitionLaw, RunPoint};
use crate::optim::{self, Bounds, LbfgsConfig, Objective, SimplexConfig, Termination};

pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

/// Objective values within this band are treated as ties.
const TIE_TOLERANCE: f64 = 1e-12;

const BASE_EXPONENT_MAX: f64 = 2.0 - 1e-9;
const PENALTY_EXPONENT_MAX: f64 = 4.0;
const EXPONENT_MIN: f64 = 1e-6;
const LOG_LIMIT: f64 = 690.0;

/// One observed training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: RunPoint,
    /// Final validation loss in nats.
    pub loss: f64,
    /// Free-form tag (e.g. the weight-decay setting); never used in a law.
    #[serde(default)]
    pub group: String,
}

impl RunRecord {
    pub fn new(point: RunPoint, loss: f64, group: impl Into<String>) -> Result<Self> {
        let r = Self { point, loss, group: group.into() };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        self.point.validate()?;
        if !(self.loss.is_finite() && self.loss > 0.0) {
            return Err(Error::InvalidPoint(format!("loss must be positive and finite, got {}", self.loss)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub huber_delta: f64,
    /// Starting values keyed by parameter name (`E`, `A`, `alpha`, `B`,
    /// `beta`, `r_star_d`, `r_star_n`, `p`, `delta`, `kappa`, `gamma`).
    /// Missing names fall back to [`default_grid`].
    pub init_grid: BTreeMap<String, Vec<f64>>,
    pub max_iterations: usize,
    /// Projected-gradient infinity norm at which L-BFGS stops.
    pub convergence_tol: f64,
    pub phase: Phase,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            huber_delta: DEFAULT_HUBER_DELTA,
            init_grid: BTreeMap::new(),
            max_iterations: 2000,
            convergence_tol: 1e-14,
            phase: Phase::Two,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(Error::InvalidParams(format!("huber_delta must be positive, got {}", self.huber_delta)));
        }
        if let Some((name, _)) = self.init_grid.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidParams(format!("empty init grid for `{name}`")));
        }
        Ok(())
    }

    /// A copy whose only start is `params`, e.g. a full-data estimate used
    /// to seed bootstrap refits.
    pub fn anchored_at(&self, params: &[(String, f64)]) -> Self {
        let mut cfg = self.clone();
        cfg.init_grid = params.iter().map(|(n, v)| (n.clone(), vec![*v])).collect();
        cfg
    }

    fn grid_for(&self, name: &str, kind: LawKind) -> Vec<f64> {
        self.init_grid.get(name).cloned().unwrap_or_else(|| default_grid(name, kind))
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig { max_iterations: self.max_iterations, grad_tol: self.convergence_tol, ..LbfgsConfig::default() }
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Default starting values for a parameter of a law family.
pub fn default_grid(name: &str, kind: LawKind) -> Vec<f64> {
    match name {
        "E" => vec![1.0, 1.5, 2.0, 2.5],
        "A" | "B" => vec![1e2, 1e3, 1e4],
        "alpha" | "beta" => vec![0.2, 0.35, 0.5],
        "p" if kind == LawKind::Add4 => vec![1e-8, 10f64.powf(-4.5), 1e-1],
        "p" => log_spaced(1e-8, 1e-1, 7),
        "delta" | "kappa" | "gamma" => vec![0.5, 1.0, 1.5, 2.0],
        "r_star_d" => vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
        "r_star_n" => vec![1.0, 10.0, 100.0, 1e3, 1e4],
        _ => vec![1.0],
    }
}

/// `r^2/2` inside `[-delta, delta]`, `delta * (|r| - delta/2)` outside.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
fn huber_slope(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Mean Huber loss of `ln(predicted) - ln(observed)` over `runs`.
pub fn huber_log_objective(spec: &LawSpec, runs: &[RunRecord], delta: f64) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for run in runs {
        let pred = spec.predict(&run.point);
        if !(pred.is_finite() && pred > 0.0) {
            return Err(Error::NonFinite(format!("prediction {pred} at {:?}", run.point)));
        }
        total += huber(pred.ln() - run.loss.ln(), delta);
    }
    Ok(total / runs.len() as f64)
}

/// Coefficient-of-determination variants on raw losses plus the Huber
/// objective. An R² is `None` when its subset is empty or has zero spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub r2_all: Option<f64>,
    pub r2_multi: Option<f64>,
    pub r2_single: Option<f64>,
    pub huber: f64,
}

fn r_squared(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return None;
    }
    let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

pub fn compute_metrics(spec: &LawSpec, runs: &[RunRecord]) -> Result<FitMetrics> {
    compute_metrics_with_delta(spec, runs, DEFAULT_HUBER_DELTA)
}

pub fn compute_metrics_with_delta(spec: &LawSpec, runs: &[RunRecord], delta: f64) -> Result<FitMetrics> {
    let huber = huber_log_objective(spec, runs, delta)?;
    let mut all = Vec::with_capacity(runs.len());
    let mut single = Vec::new();
    let mut multi = Vec::new();
    for run in runs {
        let pair = (run.loss, spec.predict(&run.point));
        all.push(pair);
        if run.point.is_single_epoch() {
            single.push(pair);
        } else {
            multi.push(pair);
        }
    }
    Ok(FitMetrics { r2_all: r_squared(&all), r2_multi: r_squared(&multi), r2_single: r_squared(&single), huber })
}

/// Outcome of a fit: parameters, fit quality and optimizer diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: LawSpec,
    /// Final value of the minimized objective on the fitted subset.
    pub objective: f64,
    /// Metrics over every supplied run.
    pub metrics: FitMetrics,
    pub n_total: usize,
    pub n_multi: usize,
    pub n_single: usize,
    pub starts_tried: usize,
    pub best_start_index: usize,
    pub converged: bool,
    #[serde(default)]
    pub bootstrap: Option<BootstrapReport>,
}

impl FitReport {
    /// The fitted values of the parameters this fit optimized.
    pub fn fitted_params(&self, phase: Phase) -> Vec<(String, f64)> {
        match phase {
            Phase::One => ChinchillaParams::NAMES
                .iter()
                .zip(self.spec.base.to_vec())
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
            Phase::Two => self
                .spec
                .kind()
                .param_names()
                .iter()
                .zip(self.spec.rep.params())
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Transform {
    Log,
    Linear { lo: f64, hi: f64 },
}

impl Transform {
    fn for_param(name: &str) -> Self {
        match name {
            "alpha" | "beta" => Transform::Linear { lo: EXPONENT_MIN, hi: BASE_EXPONENT_MAX },
            "delta" | "kappa" | "gamma" => Transform::Linear { lo: EXPONENT_MIN, hi: PENALTY_EXPONENT_MAX },
            _ => Transform::Log,
        }
    }

    fn decode(&self, z: f64) -> f64 {
        match self {
            Transform::Log => z.exp(),
            Transform::Linear { .. } => z,
        }
    }

    fn encode(&self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Linear { lo, hi } => v.clamp(*lo, *hi),
        }
    }

    /// d(raw)/d(z) at raw value `v`.
    fn jacobian(&self, v: f64) -> f64 {
        match self {
            Transform::Log => v,
            Transform::Linear { .. } => 1.0,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            Transform::Log => (-LOG_LIMIT, LOG_LIMIT),
            Transform::Linear { lo, hi } => (*lo, *hi),
        }
    }
}

enum Target {
    Base,
    Repetition { base: ChinchillaParams, kind: LawKind },
}

struct FitObjective<'a> {
    runs: &'a [RunRecord],
    log_loss: Vec<f64>,
    delta: f64,
    target: Target,
    transforms: Vec<Transform>,
}

impl<'a> FitObjective<'a> {
    fn new(runs: &'a [RunRecord], delta: f64, target: Target) -> Self {
        let names: Vec<&str> = match &target {
            Target::Base => ChinchillaParams::NAMES.to_vec(),
            Target::Repetition { kind, .. } => kind.param_names().to_vec(),
        };
        let transforms = names.iter().map(|n| Transform::for_param(n)).collect();
        let log_loss = runs.iter().map(|r| r.loss.ln()).collect();
        Self { runs, log_loss, delta, target, transforms }
    }

    fn raw(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.transforms).map(|(v, t)| t.decode(*v)).collect()
    }

    fn encode(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.transforms).map(|(v, t)| t.encode(*v)).collect()
    }

    fn bounds(&self) -> Bounds {
        let (lower, upper) = self.transforms.iter().map(|t| t.bounds()).unzip();
        Bounds { lower, upper }
    }

    fn spec(&self, raw: &[f64]) -> Option<LawSpec> {
        if raw.iter().any(|v| !v.is_finite()) {
            return None;
        }
        match &self.target {
            Target::Base => Some(LawSpec::chinchilla(ChinchillaParams::from_slice(raw))),
            Target::Repetition { base, kind } => {
                RepetitionLaw::from_params(*kind, raw).ok().map(|rep| LawSpec { base: *base, rep })
            }
        }
    }

    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let raw = self.raw(z);
        let Some(spec) = self.spec(&raw) else {
            return f64::INFINITY;
        };
        let n = self.runs.len() as f64;
        let mut total = 0.0;
        let mut acc = vec![0.0; z.len()];
        let want_grad = grad.is_some();
        for (run, log_obs) in self.runs.iter().zip(&self.log_loss) {
            let pred = spec.predict(&run.point);
            if !(pred.is_finite() && pred > 0.0) {
                return f64::INFINITY;
            }
            let r = pred.ln() - log_obs;
            total += huber(r, self.delta);
            if want_grad {
                let w = huber_slope(r, self.delta) / pred;
                match self.target {
                    Target::Base => {
                        for (a, d) in acc.iter_mut().zip(spec.base_gradient(&run.point)) {
                            *a += w * d;
                        }
                    }
                    Target::Repetition { .. } => {
                        for (a, d) in acc.iter_mut().zip(spec.rep_gradient(&run.point)) {
                            *a += w * d;
                        }
                    }
                }
            }
        }
        if let Some(g) = grad {
            for i in 0..g.len() {
                g[i] = acc[i] * self.transforms[i].jacobian(raw[i]) / n;
            }
        }
        let v = total / n;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

impl Objective for FitObjective<'_> {
    fn dim(&self) -> usize {
        self.transforms.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.eval(z, None)
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.eval(z, Some(grad));
        if grad.iter().any(|g| !g.is_finite()) {
            return f64::INFINITY;
        }
        v
    }
}

#[derive(Clone, Debug)]
pub(crate) struct StartOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
}

/// Runs every start (in parallel) and returns all outcomes in start order.
pub(crate) fn run_starts<O: Objective>(
    obj: &O,
    starts: &[Vec<f64>],
    bounds: &Bounds,
    lbfgs_cfg: &LbfgsConfig,
) -> Vec<Option<StartOutcome>> {
    starts
        .par_iter()
        .map(|x0| {
            let m = optim::lbfgs(obj, x0, bounds, lbfgs_cfg);
            let (x, f, converged) = match m.termination {
                Termination::NonFiniteStart => return None,
                Termination::LineSearchFailed | Termination::MaxIterations => {
                    let nm = optim::nelder_mead(obj, &m.x, bounds, &SimplexConfig::default());
                    if nm.f <= m.f {
                        (nm.x, nm.f, nm.termination.is_converged())
                    } else {
                        (m.x, m.f, nm.termination.is_converged())
                    }
                }
                t => (m.x, m.f, t.is_converged()),
            };
            f.is_finite().then_some(StartOutcome { x, f, converged })
        })
        .collect()
}

/// Lowest objective wins; ties within [`TIE_TOLERANCE`] go to the lowest index.
pub(crate) fn pick_best(outcomes: &[Option<StartOutcome>]) -> Option<(usize, &StartOutcome)> {
    let mut best: Option<(usize, &StartOutcome)> = None;
    for (i, o) in outcomes.iter().enumerate() {
        let Some(o) = o else { continue };
        match best {
            Some((_, b)) if o.f >= b.f - TIE_TOLERANCE => {}
            _ => best = Some((i, o)),
        }
    }
    best
}

fn cartesian(lists: &[Vec<f64>]) -> Vec<Vec<f64>> {
    lists.iter().fold(vec![vec![]], |acc, list| {
        acc.iter()
            .flat_map(|prefix| {
                list.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

struct MultiStartResult {
    raw: Vec<f64>,
    objective: f64,
    starts: usize,
    best_index: usize,
    converged: bool,
}

fn multi_start(obj: &FitObjective<'_>, grid: &[Vec<f64>], cfg: &FitConfig) -> Result<MultiStartResult> {
    let starts: Vec<Vec<f64>> = cartesian(grid).iter().map(|raw| obj.encode(raw)).collect();
    let bounds = obj.bounds();
    let outcomes = run_starts(obj, &starts, &bounds, &cfg.lbfgs());
    let (index, best) = pick_best(&outcomes).ok_or(Error::NoConvergedStart { starts: starts.len() })?;
    Ok(MultiStartResult {
        raw: obj.raw(&best.x),
        objective: best.f,
        starts: starts.len(),
        best_index: index,
        converged: best.converged,
    })
}

fn partition_counts(runs: &[RunRecord]) -> (usize, usize) {
    let single = runs.iter().filter(|r| r.point.is_single_epoch()).count();
    (single, runs.len() - single)
}

/// Fits the five base constants to the single-epoch subset of `runs`.
/// Metrics in the report cover all of `runs`, with repeated tokens counted
/// as fresh data.
pub fn fit_phase1(runs: &[RunRecord], cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let single: Vec<RunRecord> = runs.iter().filter(|r| r.point.is_single_epoch()).cloned().collect();
    let needed = ChinchillaParams::NAMES.len() + 1;
    if single.len() < needed {
        return Err(Error::InsufficientData { needed, got: single.len() });
    }
    let obj = FitObjective::new(&single, cfg.huber_delta, Target::Base);
    let grid: Vec<Vec<f64>> =
        ChinchillaParams::NAMES.iter().map(|n| cfg.grid_for(n, LawKind::Chinchilla)).collect();
    let best = multi_start(&obj, &grid, cfg)?;
    let base = ChinchillaParams::from_slice(&best.raw);
    base.validate()?;
    let spec = LawSpec::chinchilla(base);
    let metrics = compute_metrics_with_delta(&spec, runs, cfg.huber_delta)?;
    let (n_single, n_multi) = partition_counts(runs);
    Ok(FitReport {
        spec,
        objective: best.objective,
        metrics,
        n_total: runs.len(),
        n_multi,
        n_single,
        starts_tried: best.starts,
        best_start_index: best.best_index,
        converged: best.converged,
        bootstrap: None,
    })
}

/// Fits the repetition parameters of `kind` with `base` held fixed.
pub fn fit_phase2(base: &ChinchillaParams, kind: LawKind, runs: &[RunRecord], cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    base.validate()?;
    let (n_single, n_multi) = partition_counts(runs);
    if kind == LawKind::Chinchilla {
        let spec = LawSpec::chinchilla(*base);
        let metrics = compute_metrics_with_delta(&spec, runs, cfg.huber_delta)?;
        return Ok(FitReport {
            spec,
            objective: metrics.huber,
            metrics,
            n_total: runs.len(),
            n_multi,
            n_single,
            starts_tried: 0,
            best_start_index: 0,
            converged: true,
            bootstrap: None,
        });
    }
    if n_multi == 0 {
        return Err(Error::Unidentifiable(format!(
            "{kind} parameters need multi-epoch runs; all {} runs are single-epoch",
            runs.len()
        )));
    }
    let needed = kind.n_params() + 1;
    if runs.len() < needed {
        return Err(Error::InsufficientData { needed, got: runs.len() });
    }
    let obj = FitObjective::new(runs, cfg.huber_delta, Target::Repetition { base: *base, kind });
    let grid: Vec<Vec<f64>> = kind.param_names().iter().map(|n| cfg.grid_for(n, kind)).collect();
    let best = multi_start(&obj, &grid, cfg)?;
    let rep = RepetitionLaw::from_params(kind, &best.raw)?;
    let spec = LawSpec { base: *base, rep };
    let metrics = compute_metrics_with_delta(&spec, runs, cfg.huber_delta)?;
    Ok(FitReport {
        spec,
        objective: best.objective,
        metrics,
        n_total: runs.len(),
        n_multi,
        n_single,
        starts_tried: best.starts,
        best_start_index: best.best_index,
        converged: best.converged,
        bootstrap: None,
    })
}

/// Phase 1 on the single-epoch subset followed by Phase 2 for `kind`.
pub fn fit_two_phase(kind: LawKind, runs: &[RunRecord], cfg: &FitConfig) -> Result<(FitReport, FitReport)> {
    let phase1 = fit_phase1(runs, cfg)?;
    let phase2 = fit_phase2(&phase1.spec.base, kind, runs, cfg)?;
    Ok((phase1, phase2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::published;

    fn rec(n: f64, u: f64, ep: f64, loss: f64) -> RunRecord {
        RunRecord::new(RunPoint::new(n, u, ep).unwrap(), loss, "").unwrap()
    }

    #[test]
    fn huber_regimes() {
        let d = 1e-3;
        assert_eq!(huber(0.0, d), 0.0);
        assert!((huber(0.5e-3, d) - 0.125e-6).abs() < 1e-20);
        assert!((huber(2.0 * d, d) - 1.5 * d * d).abs() < 1e-20);
        assert!((huber(-2.0 * d, d) - 1.5 * d * d).abs() < 1e-20);
    }

    #[test]
    fn objective_single_run_linear_regime() {
        let spec = LawSpec::chinchilla(published::STD_BASE);
        let pt = RunPoint::new(1e8, 1e9, 1.0).unwrap();
        let pred = spec.predict(&pt);
        let d: f64 = 1e-3;
        let observed = pred * (-2.0 * d).exp();
        let runs = vec![RunRecord::new(pt, observed, "").unwrap()];
        let v = huber_log_objective(&spec, &runs, d).unwrap();
        assert!((v - 1.5 * d * d).abs() < 1e-15, "{v}");
    }

    #[test]
    fn objective_rejects_nonpositive_predictions() {
        let base = ChinchillaParams { e: 0.0, a: 1e-300, alpha: 1.0, b: 1e-300, beta: 1.0 };
        let mut spec = LawSpec::chinchilla(base);
        spec.rep = RepetitionLaw::AddPenalty1 { p: f64::INFINITY };
        let runs = vec![rec(1e6, 1e6, 2.0, 3.0)];
        assert!(huber_log_objective(&spec, &runs, 1e-3).is_err());
    }

    #[test]
    fn metrics_degenerate_subsets() {
        let spec = LawSpec::chinchilla(published::STD_BASE);
        let pts = [(1e7, 1e8, 1.0), (1e8, 1e8, 1.0), (1e8, 1e9, 1.0), (5e7, 1e8, 4.0)];
        let runs: Vec<RunRecord> =
            pts.iter().map(|&(n, u, e)| rec(n, u, e, spec.predict(&RunPoint::new(n, u, e).unwrap()))).collect();
        let m = compute_metrics(&spec, &runs).unwrap();
        assert_eq!(m.r2_all, Some(1.0));
        assert_eq!(m.r2_single, Some(1.0));
        assert_eq!(m.r2_multi, None, "single-record subset has no spread");
        assert_eq!(m.huber, 0.0);
        let only_single = &runs[..3];
        assert_eq!(compute_metrics(&spec, only_single).unwrap().r2_multi, None);
    }

    #[test]
    fn r2_of_mean_predictor_is_zero() {
        let pairs = [(3.0, 4.0), (4.0, 4.0), (5.0, 4.0)];
        assert_eq!(r_squared(&pairs), Some(0.0));
    }

    #[test]
    fn phase1_needs_six_single_epoch_runs() {
        let runs: Vec<RunRecord> = (0..10).map(|i| rec(1e7 * (i + 1) as f64, 1e8, 2.0, 3.0)).collect();
        assert!(matches!(
            fit_phase1(&runs, &FitConfig::default()),
            Err(Error::InsufficientData { needed: 6, got: 0 })
        ));
    }

    #[test]
    fn phase2_without_repetition_is_unidentifiable() {
        let runs: Vec<RunRecord> = (0..10).map(|i| rec(1e7 * (i + 1) as f64, 1e8, 1.0, 3.0)).collect();
        for kind in [LawKind::Add1, LawKind::Add4, LawKind::ExpDecay] {
            assert!(matches!(
                fit_phase2(&published::STD_BASE, kind, &runs, &FitConfig::default()),
                Err(Error::Unidentifiable(_))
            ));
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut cfg = FitConfig::default();
        cfg.init_grid.insert("E".into(), vec![]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tie_breaking_prefers_lowest_index() {
        let o = |f: f64| Some(StartOutcome { x: vec![], f, converged: true });
        let outcomes = vec![None, o(1.0), o(1.0 - 1e-13), o(0.5), o(0.5 + 1e-14), o(0.5 - 2e-12)];
        let (i, _) = pick_best(&outcomes).unwrap();
        assert_eq!(i, 5);
        let (i, _) = pick_best(&outcomes[..5]).unwrap();
        assert_eq!(i, 3);
    }

    #[test]
    fn analytic_objective_gradient_matches_finite_differences() {
        let spec = published::std_add4();
        let mut runs = Vec::new();
        for (k, &(n, u)) in [(2.5e7, 5e7), (1.3e8, 2e8), (4.9e8, 1e8)].iter().enumerate() {
            for ep in [1.0, 2.0, 4.0, 8.0, 16.0] {
                let pt = RunPoint::new(n, u, ep).unwrap();
                let wiggle = 1.0 + 0.004 * ((k as f64 + ep).sin());
                runs.push(RunRecord::new(pt, spec.predict(&pt) * wiggle, "").unwrap());
            }
        }
        let targets = [
            Target::Base,
            Target::Repetition { base: published::STD_BASE, kind: LawKind::Add4 },
            Target::Repetition { base: published::STD_BASE, kind: LawKind::EffParam },
        ];
        let points: [&[f64]; 3] = [
            &[1.9, 250.0, 0.31, 5200.0, 0.41],
            &[4e-7, 1.6, 1.3, 0.66],
            &[6.0, 3.0],
        ];
        for (target, raw) in targets.into_iter().zip(points) {
            let obj = FitObjective::new(&runs, 1e-3, target);
            let z = obj.encode(raw);
            let mut g = vec![0.0; z.len()];
            obj.value_grad(&z, &mut g);
            let mut fd = vec![0.0; z.len()];
            optim::central_difference(|p| obj.value(p), &z, &mut fd);
            for i in 0..z.len() {
                let scale = g[i].abs().max(fd[i].abs());
                assert!((g[i] - fd[i]).abs() <= 1e-4 * scale + 1e-14, "component {i}: {} vs {}", g[i], fd[i]);
            }
        }
    }
}
