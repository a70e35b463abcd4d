use scalefit::data::{DATA_BUDGETS, EPOCH_LEVELS, MODEL_SIZES};
use scalefit::{
    fit_phase1, fit_phase2, generate_synthetic, published, ChinchillaParams, FitConfig, LawKind, LawSpec,
    RepetitionLaw, RunPoint, RunRecord, SyntheticSpec,
};

fn single_epoch_grid() -> Vec<RunPoint> {
    MODEL_SIZES
        .iter()
        .flat_map(|&n| DATA_BUDGETS.iter().map(move |&u| RunPoint { n_params: n, u_tokens: u, epochs: 1.0 }))
        .collect()
}

fn multi_epoch_grid() -> Vec<RunPoint> {
    let mut pts = Vec::new();
    for &n in &MODEL_SIZES[2..8] {
        for &u in &DATA_BUDGETS[..5] {
            for &e in &EPOCH_LEVELS {
                pts.push(RunPoint { n_params: n, u_tokens: u, epochs: e });
            }
        }
    }
    pts
}

fn synth(law: LawSpec, grid: Vec<RunPoint>, sigma: f64, seed: u64) -> Vec<RunRecord> {
    generate_synthetic(&SyntheticSpec { generating_law: law, grid, noise_sigma: sigma, seed }).unwrap().records
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn assert_base_close(got: &ChinchillaParams, want: &ChinchillaParams, tol: f64) {
    for ((name, g), w) in ChinchillaParams::NAMES.iter().zip(got.to_vec()).zip(want.to_vec()) {
        assert!(rel(g, w) <= tol, "{name}: got {g}, want {w} (rel {:.3e})", rel(g, w));
    }
}

#[test]
fn phase1_recovers_noiseless_base() {
    let runs = synth(LawSpec::chinchilla(published::STD_BASE), single_epoch_grid(), 0.0, 0);
    let report = fit_phase1(&runs, &FitConfig::default()).unwrap();
    eprintln!("{:?} obj={:e} conv={}", report.spec.base, report.objective, report.converged);
    assert_base_close(&report.spec.base, &published::STD_BASE, 0.01);
    assert!(report.metrics.r2_all.unwrap() > 0.999_999);
}

#[test]
fn duplicated_records_give_the_same_fit() {
    let runs = synth(LawSpec::chinchilla(published::STD_BASE), single_epoch_grid(), 0.01, 3);
    let doubled: Vec<RunRecord> = runs.iter().chain(runs.iter()).cloned().collect();
    let cfg = FitConfig::default();
    let a = fit_phase1(&runs, &cfg).unwrap();
    let b = fit_phase1(&doubled, &cfg).unwrap();
    assert_base_close(&b.spec.base, &a.spec.base, 1e-6);
    assert!((a.objective - b.objective).abs() <= 1e-12 * a.objective.max(1e-300) + 1e-18);
}

#[test]
fn phase2_recovers_add1_penalty() {
    let law = LawSpec { base: published::STD_BASE, rep: published::STD_ADD1 };
    let runs = synth(law, multi_epoch_grid(), 0.0, 0);
    let report = fit_phase2(&published::STD_BASE, LawKind::Add1, &runs, &FitConfig::default()).unwrap();
    let RepetitionLaw::AddPenalty1 { p } = report.spec.rep else { panic!("wrong family") };
    assert!(rel(p, 0.02305) <= 0.02, "p = {p}");
}

#[test]
fn phase2_recovers_add4_parameters() {
    let law = published::std_add4();
    let runs = synth(law, multi_epoch_grid(), 0.0, 0);
    let report = fit_phase2(&published::STD_BASE, LawKind::Add4, &runs, &FitConfig::default()).unwrap();
    eprintln!("{:?} obj={:e} start={}", report.spec.rep, report.objective, report.best_start_index);
    for ((name, got), want) in LawKind::Add4.param_names().iter().zip(report.spec.rep.params()).zip(law.rep.params()) {
        assert!(rel(got, want) <= 0.05, "{name}: got {got}, want {want}");
    }
}

#[test]
fn phase2_recovers_saturating_laws() {
    let cfg = FitConfig::default();
    for rep in [published::STD_EXP_DECAY, published::WD_EXP_DECAY] {
        let law = LawSpec { base: published::STD_BASE, rep };
        let runs = synth(law, multi_epoch_grid(), 0.0, 0);
        let report = fit_phase2(&published::STD_BASE, rep.kind(), &runs, &cfg).unwrap();
        for (got, want) in report.spec.rep.params().iter().zip(rep.params()) {
            assert!(rel(*got, want) <= 0.01, "{rep:?}: got {got}");
        }
    }
}

#[test]
fn noise_degrades_fit_quality_monotonically() {
    let cfg = FitConfig::default();
    let mut last = f64::INFINITY;
    for sigma in [0.0, 0.01, 0.05] {
        let runs = synth(LawSpec::chinchilla(published::STD_BASE), single_epoch_grid(), sigma, 11);
        let r2 = fit_phase1(&runs, &cfg).unwrap().metrics.r2_all.unwrap();
        assert!(r2 <= last + 1e-12, "sigma {sigma}: R2 {r2} > {last}");
        last = r2;
    }
}
