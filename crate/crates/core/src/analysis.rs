//! Repetition residuals, shared-exponent power fits, bootstrap uncertainty,
//! and the published-versus-refit base comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    self, compute_metrics_with_delta, fit_phase1, fit_phase2, huber, FitConfig, FitReport, Phase, RunRecord,
    DEFAULT_HUBER_DELTA,
};
use crate::laws::{ChinchillaParams, LawKind, LawSpec};
use crate::optim::{Bounds, LbfgsConfig, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub r_d: f64,
    pub excess_loss: f64,
}

/// Excess loss over the base-law prediction for one (N, U_D) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCell {
    pub n_params: f64,
    pub u_tokens: f64,
    pub residuals: Vec<ResidualPoint>,
}

/// `observed - chinchilla(N, U_D * epochs)` for every multi-epoch run,
/// grouped by cell in order of first appearance. Negative values are kept.
pub fn compute_residuals(base: &ChinchillaParams, runs: &[RunRecord]) -> Vec<ResidualCell> {
    let mut cells: Vec<ResidualCell> = Vec::new();
    for run in runs.iter().filter(|r| !r.point.is_single_epoch()) {
        let pt = &run.point;
        let excess = run.loss - base.loss(pt.n_params, pt.total_tokens());
        let entry = ResidualPoint { r_d: pt.repetitions(), excess_loss: excess };
        match cells.iter_mut().find(|c| c.n_params == pt.n_params && c.u_tokens == pt.u_tokens) {
            Some(cell) => cell.residuals.push(entry),
            None => cells.push(ResidualCell { n_params: pt.n_params, u_tokens: pt.u_tokens, residuals: vec![entry] }),
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPower {
    pub n_params: f64,
    pub u_tokens: f64,
    pub p: f64,
    pub points_used: usize,
}

/// `excess ≈ P_i * R_D^delta` with `delta` shared across cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedPowerFit {
    pub delta: f64,
    pub p_per_cell: Vec<CellPower>,
    /// Residual points dropped because their excess was not positive.
    pub excluded_nonpositive: usize,
    /// Cells dropped for having fewer than two positive points.
    pub skipped_cells: usize,
    pub objective: f64,
}

struct SharedPowerObjective {
    // (cell index, ln R_D, ln excess)
    points: Vec<(usize, f64, f64)>,
    cells: usize,
    delta: f64,
}

impl SharedPowerObjective {
    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let shared = z[0];
        let n = self.points.len() as f64;
        let mut total = 0.0;
        let mut acc = vec![0.0; self.cells + 1];
        for &(cell, ln_r, ln_excess) in &self.points {
            let r = z[cell + 1] + shared * ln_r - ln_excess;
            total += huber(r, self.delta);
            let w = r.clamp(-self.delta, self.delta);
            acc[0] += w * ln_r;
            acc[cell + 1] += w;
        }
        if let Some(g) = grad {
            for (gi, a) in g.iter_mut().zip(acc) {
                *gi = a / n;
            }
        }
        total / n
    }
}

impl Objective for SharedPowerObjective {
    fn dim(&self) -> usize {
        self.cells + 1
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.eval(z, None)
    }
    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(z, Some(grad))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn fit_shared_power(cells: &[ResidualCell]) -> Result<SharedPowerFit> {
    fit_shared_power_with_delta(cells, DEFAULT_HUBER_DELTA)
}

/// Huber-in-log-space fit of `ln(excess) = ln(P_i) + delta * ln(R_D)`.
pub fn fit_shared_power_with_delta(cells: &[ResidualCell], huber_delta: f64) -> Result<SharedPowerFit> {
    let mut excluded = 0;
    let mut skipped = 0;
    let mut kept: Vec<(&ResidualCell, Vec<(f64, f64)>)> = Vec::new();
    for cell in cells {
        let mut pts = Vec::new();
        for p in &cell.residuals {
            if p.excess_loss > 0.0 && p.r_d > 0.0 {
                pts.push((p.r_d.ln(), p.excess_loss.ln()));
            } else {
                excluded += 1;
            }
        }
        if pts.len() >= 2 {
            kept.push((cell, pts));
        } else {
            skipped += 1;
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientResiduals(format!(
            "{} cell(s) have at least two positive residuals; need 2",
            kept.len()
        )));
    }

    let points: Vec<(usize, f64, f64)> = kept
        .iter()
        .enumerate()
        .flat_map(|(i, (_, pts))| pts.iter().map(move |&(lr, le)| (i, lr, le)))
        .collect();
    let obj = SharedPowerObjective { points, cells: kept.len(), delta: huber_delta };
    let mut lower = vec![f64::NEG_INFINITY; obj.dim()];
    let mut upper = vec![f64::INFINITY; obj.dim()];
    lower[0] = 1e-6;
    upper[0] = 8.0;
    let bounds = Bounds { lower, upper };

    let starts: Vec<Vec<f64>> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&d0| {
            let mut z = vec![d0];
            for (_, pts) in &kept {
                let mut offsets: Vec<f64> = pts.iter().map(|(lr, le)| le - d0 * lr).collect();
                z.push(median(&mut offsets));
            }
            z
        })
        .collect();
    let outcomes = fit::run_starts(&obj, &starts, &bounds, &LbfgsConfig::default());
    let (_, best) = fit::pick_best(&outcomes).ok_or(Error::NoConvergedStart { starts: starts.len() })?;

    Ok(SharedPowerFit {
        delta: best.x[0],
        p_per_cell: kept
            .iter()
            .enumerate()
            .map(|(i, (cell, pts))| CellPower {
                n_params: cell.n_params,
                u_tokens: cell.u_tokens,
                p: best.x[i + 1].exp(),
                points_used: pts.len(),
            })
            .collect(),
        excluded_nonpositive: excluded,
        skipped_cells: skipped,
        objective: best.f,
    })
}

/// Relative reduction of an overfitting coefficient, `(p_ref - p_new) / p_ref`.
pub fn penalty_reduction(p_ref: f64, p_new: f64) -> f64 {
    (p_ref - p_new) / p_ref
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamUncertainty {
    pub name: String,
    /// Full-data fit.
    pub estimate: f64,
    /// Unscaled median absolute deviation across resample fits.
    pub mad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub resamples: usize,
    pub failed: usize,
    pub seed: u64,
    pub params: Vec<ParamUncertainty>,
}

impl BootstrapReport {
    pub fn mad(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.mad)
    }
}

/// A fitting routine for bootstrapping: records in, named parameters out.
pub type FitProcedure<'a> = dyn Fn(&[RunRecord]) -> Result<Vec<(String, f64)>> + Sync + 'a;

/// Resamples run records with replacement and refits. Resample `i` draws
/// from a ChaCha8 stream `i` keyed by `seed`, so results do not depend on
/// scheduling. Fails only when more than half the resamples fail.
pub fn bootstrap_fit(
    runs: &[RunRecord],
    procedure: &FitProcedure<'_>,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if resamples < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 resamples, got {resamples}")));
    }
    let full = procedure(runs)?;
    let fits: Vec<Option<Vec<(String, f64)>>> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let sample: Vec<RunRecord> =
                (0..runs.len()).map(|_| runs[rng.random_range(0..runs.len())].clone()).collect();
            procedure(&sample).ok()
        })
        .collect();
    let failed = fits.iter().filter(|f| f.is_none()).count();
    if 2 * failed > resamples {
        return Err(Error::BootstrapFailed { failed, total: resamples });
    }
    let ok: Vec<&Vec<(String, f64)>> = fits.iter().flatten().collect();
    let params = full
        .iter()
        .enumerate()
        .map(|(j, (name, estimate))| {
            let mut values: Vec<f64> = ok.iter().map(|f| f[j].1).collect();
            let center = median(&mut values);
            let mut dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
            ParamUncertainty { name: name.clone(), estimate: *estimate, mad: median(&mut dev) }
        })
        .collect();
    Ok(BootstrapReport { resamples, failed, seed, params })
}

/// Bootstrap procedure refitting the base constants.
pub fn phase1_procedure(cfg: FitConfig) -> impl Fn(&[RunRecord]) -> Result<Vec<(String, f64)>> + Sync {
    move |runs| fit_phase1(runs, &cfg).map(|r| r.fitted_params(Phase::One))
}

/// Bootstrap procedure refitting only the repetition parameters on a fixed base.
pub fn phase2_procedure(
    base: ChinchillaParams,
    kind: LawKind,
    cfg: FitConfig,
) -> impl Fn(&[RunRecord]) -> Result<Vec<(String, f64)>> + Sync {
    move |runs| fit_phase2(&base, kind, runs, &cfg).map(|r| r.fitted_params(Phase::Two))
}

/// One row of the published-versus-refit comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub base: String,
    pub law: LawKind,
    pub r2_all: Option<f64>,
    /// Improvement in `r2_all` over the matching base-only row.
    pub delta_r2: Option<f64>,
    pub r2_single: Option<f64>,
    pub r2_multi: Option<f64>,
    pub huber: f64,
    pub spec: LawSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn row(condition: String, base: &str, spec: LawSpec, runs: &[RunRecord], reference: Option<f64>, delta: f64) -> Result<ComparisonRow> {
    let m = compute_metrics_with_delta(&spec, runs, delta)?;
    Ok(ComparisonRow {
        condition,
        base: base.into(),
        law: spec.kind(),
        r2_all: m.r2_all,
        delta_r2: reference.zip(m.r2_all).map(|(r, a)| a - r),
        r2_single: m.r2_single,
        r2_multi: m.r2_multi,
        huber: m.huber,
        spec,
    })
}

/// Published base versus a base refit on the single-epoch runs, each alone
/// and with `kind` fitted on top. Returns the refit Phase-1 report too.
pub fn compare_bases(
    published: &ChinchillaParams,
    runs: &[RunRecord],
    kind: LawKind,
    cfg: &FitConfig,
) -> Result<(ComparisonTable, FitReport)> {
    published.validate()?;
    let refit = fit_phase1(runs, cfg)?;
    let delta = cfg.huber_delta;
    let mut rows = Vec::new();
    for (label, base) in [("published", *published), ("refit", refit.spec.base)] {
        let plain = row(format!("{} Chinchilla", capitalize(label)), label, LawSpec::chinchilla(base), runs, None, delta)?;
        let reference = plain.r2_all;
        rows.push(plain);
        if kind != LawKind::Chinchilla {
            let extended = fit_phase2(&base, kind, runs, cfg)?;
            rows.push(row(format!("+ {} ({label})", kind.label()), label, extended.spec, runs, reference, delta)?);
        }
    }
    Ok((ComparisonTable { rows }, refit))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}
